//! Control-affine systems `x' = f0(x) + sum_i u_i f_i(x)`, their control
//! ranges, piecewise-constant admissible controls and grid regions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::expr::Expr;

const BOX_TOL: f64 = 1e-12;

/// Compact box `prod [lo_i, hi_i]`, used both as control range and as state region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::InvalidArgument(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (i, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidArgument(format!(
                    "box axis {i} needs lo < hi, got [{a}, {b}]"
                )));
            }
        }
        Ok(BoxSet { lo, hi })
    }

    /// Cube `[-r, r]^dim`.
    pub fn symmetric(dim: usize, r: f64) -> Result<Self> {
        BoxSet::new(vec![-r; dim], vec![r; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.contains_tol(p, 0.0)
    }

    pub fn contains_tol(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.dim()
            && p
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (a, b))| *x >= a - tol && *x <= b + tol)
    }

    /// Signed distance to the boundary, positive inside (sup-norm).
    pub fn margin(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(x, (a, b))| (x - a).min(b - x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains_box(&self, other: &BoxSet, tol: f64) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| other.lo[i] >= self.lo[i] - tol && other.hi[i] <= self.hi[i] + tol)
    }

    /// `center + eta * (B - center)`.
    pub fn shrink(&self, eta: f64) -> Result<BoxSet> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidArgument(format!("shrink factor {eta} not in (0, 1]")));
        }
        let c = self.center();
        let lo = self.lo.iter().zip(&c).map(|(a, m)| m + eta * (a - m)).collect();
        let hi = self.hi.iter().zip(&c).map(|(b, m)| m + eta * (b - m)).collect();
        BoxSet::new(lo, hi)
    }

    /// Uniform lattice with `per_axis` points per axis including all corners.
    pub fn lattice(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|i| {
                if per_axis == 1 {
                    vec![0.5 * (self.lo[i] + self.hi[i])]
                } else {
                    (0..per_axis)
                        .map(|k| {
                            let s = k as f64 / (per_axis - 1) as f64;
                            if k + 1 == per_axis {
                                self.hi[i]
                            } else {
                                self.lo[i] + s * (self.hi[i] - self.lo[i])
                            }
                        })
                        .collect()
                }
            })
            .collect();
        cartesian(&axes)
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(axes.len())];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for v in axis {
                let mut p = prefix.clone();
                p.push(*v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Rows `f0..fm` of a control-affine system on `R^d` with a box control range.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    dim: usize,
    inputs: usize,
    fields: Vec<Vec<Expr>>,
    /// Nonzero Jacobian entries `(row, i, j, d f_row,i / d x_j)`.
    jacobian: Vec<(usize, usize, usize, Expr)>,
    control_box: BoxSet,
}

impl SystemSpec {
    pub fn new(dim: usize, fields: Vec<Vec<Expr>>, control_box: BoxSet) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        if fields.is_empty() {
            return Err(Error::InvalidArgument("missing drift row f0".into()));
        }
        let inputs = fields.len() - 1;
        if control_box.dim() != inputs {
            return Err(Error::InvalidArgument(format!(
                "{inputs} input field(s) but a {}-dimensional control box",
                control_box.dim()
            )));
        }
        let mut jacobian = Vec::new();
        for (r, row) in fields.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "field row {r} has {} components, expected {dim}",
                    row.len()
                )));
            }
            for (i, e) in row.iter().enumerate() {
                if let Some(v) = e.max_var() {
                    if v >= dim {
                        return Err(Error::InvalidArgument(format!(
                            "field {r}.{} references x{}",
                            i + 1,
                            v + 1
                        )));
                    }
                }
                for j in 0..dim {
                    let d = e.diff(j);
                    if !d.is_zero() {
                        jacobian.push((r, i, j, d));
                    }
                }
            }
        }
        Ok(SystemSpec { dim, inputs, fields, jacobian, control_box })
    }

    /// Builds a system from expression strings, one slice per row `f0, f1, ...`.
    pub fn from_strings(dim: usize, rows: &[&[&str]], lo: &[f64], hi: &[f64]) -> Result<Self> {
        let fields = rows
            .iter()
            .map(|row| row.iter().map(|s| Expr::parse(s, dim)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        SystemSpec::new(dim, fields, BoxSet::new(lo.to_vec(), hi.to_vec())?)
    }

    /// Reads `dim`, `inputs`, `field.<i>.<j>`, `u.lo`, `u.hi`.
    ///
    /// Row `i = 0` is the drift, `j` runs over `1..=dim`; missing entries are zero.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let dim = cfg.usize("dim")?;
        let inputs = cfg.usize_or("inputs", 0)?;
        let mut fields = Vec::with_capacity(inputs + 1);
        for i in 0..=inputs {
            let mut row = Vec::with_capacity(dim);
            for j in 1..=dim {
                let key = format!("field.{i}.{j}");
                let text = cfg.get(&key).unwrap_or("0");
                row.push(
                    Expr::parse(text, dim).map_err(|e| Error::Config(format!("{key}: {e}")))?,
                );
            }
            fields.push(row);
        }
        for key in cfg.keys() {
            if let Some(rest) = key.strip_prefix("field.") {
                let ok = rest.split_once('.').is_some_and(|(i, j)| {
                    matches!((i.parse::<usize>(), j.parse::<usize>()),
                        (Ok(i), Ok(j)) if i <= inputs && (1..=dim).contains(&j))
                });
                if !ok {
                    return Err(Error::Config(format!("field key `{key}` out of range")));
                }
            }
        }
        let (lo, hi) = if inputs == 0 {
            (Vec::new(), Vec::new())
        } else {
            (cfg.f64_list("u.lo")?, cfg.f64_list("u.hi")?)
        };
        let control_box = BoxSet::new(lo, hi).map_err(|e| Error::Config(e.to_string()))?;
        SystemSpec::new(dim, fields, control_box)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn control_box(&self) -> &BoxSet {
        &self.control_box
    }

    pub fn field(&self, row: usize, component: usize) -> &Expr {
        &self.fields[row][component]
    }

    /// `F(x, u) = f0(x) + sum u_i f_i(x)` written into `out`.
    pub fn vector_field(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.fields[0][i].eval(x)?;
        }
        for (r, ur) in u.iter().enumerate() {
            if *ur == 0.0 {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += ur * self.fields[r + 1][i].eval(x)?;
            }
        }
        Ok(())
    }

    /// `dF/dx (x, u)` written into `out` (d x d).
    pub fn jacobian(&self, x: &[f64], u: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        out.fill(0.0);
        for (r, i, j, e) in &self.jacobian {
            let w = if *r == 0 { 1.0 } else { u[r - 1] };
            if w != 0.0 {
                out[(*i, *j)] += w * e.eval(x)?;
            }
        }
        Ok(())
    }

    /// Input matrix `[f1(x) ... fm(x)]` (d x m).
    pub fn input_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut b = DMatrix::zeros(self.dim, self.inputs);
        for r in 0..self.inputs {
            for i in 0..self.dim {
                b[(i, r)] = self.fields[r + 1][i].eval(x)?;
            }
        }
        Ok(b)
    }
}

/// Finite control alphabet: uniform lattice over the control box, `levels^m` letters.
pub fn quantize_controls(spec: &SystemSpec, levels: usize) -> Result<Vec<Vec<f64>>> {
    if levels < 2 {
        return Err(Error::InvalidArgument("quantization needs at least 2 levels".into()));
    }
    Ok(spec.control_box().lattice(levels))
}

/// Piecewise-constant control, constant on `[k*step, (k+1)*step)`.
///
/// A periodic signal stores exactly one period with its first value on
/// `[0, step)`. A finite signal stores the values for steps
/// `anchor .. anchor + len` and is undefined elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    step: f64,
    values: Vec<Vec<f64>>,
    periodic: bool,
    anchor: i64,
}

impl ControlSignal {
    /// Validates step, shapes and `values ⊂ control_box`.
    pub fn new(
        step: f64,
        values: Vec<Vec<f64>>,
        periodic: bool,
        control_box: &BoxSet,
    ) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument(format!("control step {step} must be positive")));
        }
        if periodic && values.is_empty() {
            return Err(Error::InvalidArgument("periodic signal needs a nonempty period".into()));
        }
        for (k, v) in values.iter().enumerate() {
            if v.len() != control_box.dim() || !control_box.contains_tol(v, BOX_TOL) {
                return Err(Error::Admissibility(format!(
                    "control value {v:?} at step {k} outside U"
                )));
            }
        }
        Ok(ControlSignal { step, values, periodic, anchor: 0 })
    }

    pub fn constant(value: Vec<f64>, step: f64, control_box: &BoxSet) -> Result<Self> {
        ControlSignal::new(step, vec![value], true, control_box)
    }

    /// The zero-input signal for systems without controls (m = 0).
    pub fn autonomous(step: f64) -> Self {
        ControlSignal { step, values: vec![Vec::new()], periodic: true, anchor: 0 }
    }

    pub fn periodic(step: f64, values: Vec<Vec<f64>>, control_box: &BoxSet) -> Result<Self> {
        ControlSignal::new(step, values, true, control_box)
    }

    pub fn finite(step: f64, values: Vec<Vec<f64>>, control_box: &BoxSet) -> Result<Self> {
        ControlSignal::new(step, values, false, control_box)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// Period in steps for periodic signals.
    pub fn period_steps(&self) -> Option<usize> {
        self.periodic.then_some(self.values.len())
    }

    pub fn period(&self) -> Option<f64> {
        self.period_steps().map(|n| n as f64 * self.step)
    }

    pub fn anchor(&self) -> i64 {
        self.anchor
    }

    /// Defined time interval `[start, end)`; `None` for periodic signals.
    pub fn domain(&self) -> Option<(f64, f64)> {
        if self.periodic {
            None
        } else {
            let a = self.anchor as f64 * self.step;
            Some((a, a + self.values.len() as f64 * self.step))
        }
    }

    pub fn covers(&self, t0: f64, t1: f64) -> bool {
        match self.domain() {
            None => true,
            Some((a, b)) => {
                let tol = 1e-9 * self.step;
                t0 >= a - tol && t1 <= b + tol
            }
        }
    }

    pub fn value_at_step(&self, k: i64) -> Option<&[f64]> {
        let idx = k - self.anchor;
        if self.periodic {
            let n = self.values.len() as i64;
            Some(&self.values[idx.rem_euclid(n) as usize])
        } else if idx >= 0 && (idx as usize) < self.values.len() {
            Some(&self.values[idx as usize])
        } else {
            None
        }
    }

    pub fn value_at(&self, t: f64) -> Option<&[f64]> {
        self.value_at_step(self.step_index(t))
    }

    /// Grid index of time `t`, robust to rounding just below a grid point.
    pub fn step_index(&self, t: f64) -> i64 {
        (t / self.step + 1e-9).floor() as i64
    }

    /// `s -> u(s + t)`. `t` is rounded to the nearest multiple of the step,
    /// ties toward negative infinity.
    pub fn shift(&self, t: f64) -> ControlSignal {
        let k = (t / self.step - 0.5).ceil() as i64;
        self.shift_steps(k)
    }

    pub fn shift_steps(&self, k: i64) -> ControlSignal {
        if self.periodic {
            let n = self.values.len() as i64;
            let values = (0..n)
                .map(|i| self.value_at_step(i + k).expect("periodic").to_vec())
                .collect();
            ControlSignal { step: self.step, values, periodic: true, anchor: 0 }
        } else {
            ControlSignal { anchor: self.anchor - k, ..self.clone() }
        }
    }

    /// Same values, now defined from step `anchor` on (finite signals only).
    pub fn with_anchor(mut self, anchor: i64) -> ControlSignal {
        if !self.periodic {
            self.anchor = anchor;
        }
        self
    }

    /// Values on `[0, steps * step)` as a finite signal.
    pub fn restrict(&self, steps: usize) -> Result<ControlSignal> {
        let values = (0..steps as i64)
            .map(|k| {
                self.value_at_step(k).map(<[f64]>::to_vec).ok_or_else(|| {
                    Error::InvalidArgument(format!("signal undefined at step {k}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ControlSignal { step: self.step, values, periodic: false, anchor: 0 })
    }

    /// Maps every value `v` to `c + eta (v - c)` with `c` the box center.
    pub fn to_interior(&self, control_box: &BoxSet, eta: f64) -> Result<ControlSignal> {
        let c = control_box.center();
        let values = self
            .values
            .iter()
            .map(|v| v.iter().zip(&c).map(|(x, m)| m + eta * (x - m)).collect())
            .collect();
        Ok(ControlSignal { values, ..self.clone() })
    }

    pub fn is_admissible(&self, control_box: &BoxSet) -> bool {
        self.values
            .iter()
            .all(|v| v.len() == control_box.dim() && control_box.contains_tol(v, BOX_TOL))
    }
}

/// `u1` on `[0, tau1)` followed by `u2(. - tau1)` on `[tau1, tau1 + tau2)`,
/// optionally extended `(tau1 + tau2)`-periodically.
pub fn concat(
    u1: &ControlSignal,
    tau1: f64,
    u2: &ControlSignal,
    tau2: f64,
    periodize: bool,
) -> Result<ControlSignal> {
    if (u1.step - u2.step).abs() > 1e-12 * u1.step.max(u2.step) {
        return Err(Error::InvalidArgument(format!(
            "mismatched control steps {} and {}",
            u1.step, u2.step
        )));
    }
    let n1 = steps_in(tau1, u1.step)?;
    let n2 = steps_in(tau2, u1.step)?;
    let mut values = u1.restrict(n1)?.values;
    values.extend(u2.restrict(n2)?.values);
    if periodize && values.is_empty() {
        return Err(Error::InvalidArgument("cannot periodize an empty signal".into()));
    }
    Ok(ControlSignal { step: u1.step, values, periodic: periodize, anchor: 0 })
}

/// Number of whole steps in `tau`, erroring when `tau` is off-grid.
pub fn steps_in(tau: f64, step: f64) -> Result<usize> {
    let n = (tau / step).round();
    if tau < 0.0 || (n * step - tau).abs() > 1e-9 * step.max(tau) {
        return Err(Error::InvalidArgument(format!(
            "duration {tau} is not a nonnegative multiple of {step}"
        )));
    }
    Ok(n as usize)
}

/// Box tiled by cubic cells of width `cell_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    bounds: BoxSet,
    cell_width: f64,
    counts: Vec<usize>,
}

impl Region {
    pub fn new(bounds: BoxSet, cell_width: f64) -> Result<Self> {
        if !(cell_width > 0.0) {
            return Err(Error::InvalidArgument("cell width must be positive".into()));
        }
        let mut counts = Vec::with_capacity(bounds.dim());
        for i in 0..bounds.dim() {
            let len = bounds.hi[i] - bounds.lo[i];
            let n = (len / cell_width).round();
            if n < 1.0 || (n * cell_width - len).abs() > 1e-9 * len.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "cell width {cell_width} does not tile axis {i} of length {len}"
                )));
            }
            counts.push(n as usize);
        }
        Ok(Region { bounds, cell_width, counts })
    }

    pub fn bounds(&self) -> &BoxSet {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn cell_count(&self) -> usize {
        self.counts.iter().product()
    }

    /// Row-major multi-index (last axis fastest).
    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            out[i] = idx % self.counts[i];
            idx /= self.counts[i];
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.counts).fold(0, |acc, (m, n)| acc * n + m)
    }

    pub fn cell_center(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(i, m)| self.bounds.lo[i] + (*m as f64 + 0.5) * self.cell_width)
            .collect()
    }

    pub fn cell_bounds(&self, idx: usize) -> (Vec<f64>, Vec<f64>) {
        let c = self.cell_center(idx);
        let h = 0.5 * self.cell_width;
        (c.iter().map(|x| x - h).collect(), c.iter().map(|x| x + h).collect())
    }

    pub fn cell_of(&self, p: &[f64]) -> Option<usize> {
        if !self.bounds.contains(p) {
            return None;
        }
        let multi: Vec<usize> = p
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let k = ((x - self.bounds.lo[i]) / self.cell_width).floor() as usize;
                k.min(self.counts[i] - 1)
            })
            .collect();
        Some(self.flat_index(&multi))
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.cell_count()).map(|i| self.cell_center(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_box() -> BoxSet {
        BoxSet::symmetric(1, 1.0).unwrap()
    }

    #[test]
    fn quantization_examples() {
        let s = SystemSpec::from_strings(1, &[&["x1"], &["1"]], &[-1.0], &[1.0]).unwrap();
        assert_eq!(quantize_controls(&s, 3).unwrap(), vec![vec![-1.0], vec![0.0], vec![1.0]]);
        let s = SystemSpec::from_strings(1, &[&["x1"], &["1"]], &[0.0], &[2.0]).unwrap();
        assert_eq!(quantize_controls(&s, 2).unwrap(), vec![vec![0.0], vec![2.0]]);
        let s = SystemSpec::from_strings(1, &[&["x1"], &["1"], &["0"]], &[-1.0, -1.0], &[1.0, 1.0])
            .unwrap();
        let q = quantize_controls(&s, 2).unwrap();
        assert_eq!(q.len(), 4);
        for corner in [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]] {
            assert!(q.contains(&corner.to_vec()));
        }
        assert!(quantize_controls(&s, 1).is_err());
    }

    #[test]
    fn system_validation() {
        assert!(SystemSpec::from_strings(1, &[&["x2"]], &[], &[]).is_err());
        assert!(SystemSpec::from_strings(1, &[&["x1"], &["1"]], &[], &[]).is_err());
        assert!(SystemSpec::from_strings(1, &[&["x1"]], &[], &[]).is_ok());
        assert!(BoxSet::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn vector_field_and_jacobian() {
        let s = SystemSpec::from_strings(
            2,
            &[&["x1 + x2^2", "-x2"], &["0", "1"]],
            &[-1.0],
            &[1.0],
        )
        .unwrap();
        let mut f = [0.0; 2];
        s.vector_field(&[1.0, 2.0], &[0.5], &mut f).unwrap();
        assert_eq!(f, [5.0, -1.5]);
        let mut j = DMatrix::zeros(2, 2);
        s.jacobian(&[1.0, 2.0], &[0.5], &mut j).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 0.0, -1.0]));
        assert_eq!(s.input_matrix(&[0.0, 0.0]).unwrap(), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
    }

    #[test]
    fn shift_examples() {
        let bx = unit_box();
        let u = ControlSignal::finite(0.5, vec![vec![0.1], vec![0.2], vec![-0.3]], &bx).unwrap();
        assert_eq!(u.shift(0.0), u);
        assert_eq!(u.shift(0.5).shift(-0.5), u);
        assert_eq!(u.shift(0.5).value_at(0.0), Some(&[0.2][..]));
        let c = ControlSignal::constant(vec![0.4], 0.5, &bx).unwrap();
        assert_eq!(c.shift(3.5), c);
        assert_eq!(c.shift(-1.0), c);
        // ties round toward -inf: 0.25 / 0.5 = 0.5 -> 0 steps
        assert_eq!(u.shift(0.25), u);
        assert_eq!(u.shift(0.26), u.shift_steps(1));
    }

    #[test]
    fn concat_examples() {
        let bx = unit_box();
        let c1 = ControlSignal::constant(vec![0.5], 0.25, &bx).unwrap();
        let c2 = ControlSignal::constant(vec![-0.5], 0.25, &bx).unwrap();
        let w = concat(&c1, 1.0, &c2, 1.0, false).unwrap();
        assert_eq!(w.value_at(1.5), Some(&[-0.5][..]));
        assert_eq!(w.value_at(0.5), Some(&[0.5][..]));
        assert_eq!(w.value_at(2.1), None);

        let p = concat(&c1, 1.0, &c2, 1.0, true).unwrap();
        for k in 0..40 {
            let t = 0.1 * k as f64;
            assert_eq!(p.value_at(t), p.value_at(t + 2.0));
        }

        let u = ControlSignal::finite(0.25, vec![vec![0.1], vec![0.9]], &bx).unwrap();
        let empty = ControlSignal::finite(0.25, vec![], &bx).unwrap();
        let per = concat(&u, 0.5, &empty, 0.0, true).unwrap();
        assert_eq!(per.period(), Some(0.5));
        assert_eq!(per.value_at(0.75), Some(&[0.9][..]));

        let other = ControlSignal::constant(vec![0.0], 0.5, &bx).unwrap();
        assert!(concat(&c1, 1.0, &other, 1.0, false).is_err());
        assert!(concat(&c1, 0.3, &c2, 1.0, false).is_err());
    }

    #[test]
    fn signal_rejects_values_outside_u() {
        let bx = unit_box();
        assert!(matches!(
            ControlSignal::constant(vec![1.5], 0.1, &bx),
            Err(Error::Admissibility(_))
        ));
        let u = ControlSignal::constant(vec![1.0], 0.1, &bx).unwrap();
        let shrunk = bx.shrink(0.95).unwrap();
        let inner = u.to_interior(&bx, 0.95).unwrap();
        assert!(inner.is_admissible(&shrunk));
        assert!((inner.values()[0][0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn region_tiles_box() {
        let r = Region::new(BoxSet::symmetric(2, 1.0).unwrap(), 0.25).unwrap();
        assert_eq!(r.cell_count(), 64);
        let total: f64 = (0..r.cell_count()).map(|_| 0.25 * 0.25).sum();
        assert!((total - r.bounds().volume()).abs() < 1e-12);
        for i in 0..r.cell_count() {
            assert_eq!(r.cell_of(&r.cell_center(i)), Some(i));
        }
        assert!(Region::new(BoxSet::symmetric(1, 1.0).unwrap(), 0.3).is_err());
        assert_eq!(r.cell_of(&[1.0, 1.0]), Some(63));
        assert_eq!(r.cell_of(&[1.1, 0.0]), None);
    }

    proptest! {
        #[test]
        fn shift_is_a_discrete_flow(
            vals in proptest::collection::vec(-1.0f64..1.0, 1..8),
            periodic in any::<bool>(),
            s in -20i64..20,
            t in -20i64..20,
            k in -30i64..30,
        ) {
            let bx = unit_box();
            let values: Vec<Vec<f64>> = vals.into_iter().map(|v| vec![v]).collect();
            let u = ControlSignal::new(0.2, values, periodic, &bx).unwrap();
            let lhs = u.shift(0.2 * (s + t) as f64);
            let rhs = u.shift(0.2 * s as f64).shift(0.2 * t as f64);
            prop_assert_eq!(&lhs, &rhs);
            prop_assert_eq!(lhs.value_at_step(k), u.value_at_step(k + s + t));
        }
    }
}

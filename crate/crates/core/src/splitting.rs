//! Finite-time estimation of the hyperbolic splitting `E- (+) E+` along a
//! lifted trajectory `(theta_t u, phi(t, x, u))`, `t in [0, tau]`.
//!
//! `E+(t)` is the span of `Phi(t, t - T) F` for a generic frame `F` and
//! `E-(t)` the span of `Phi(t, t + T)^{-1}`-pulled frames, both computed by
//! subspace iteration over a window `[-T, tau + T]` with QR
//! re-orthonormalization after every integrator step.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cocycle::orthonormalize;
use crate::error::{Error, Result};
use crate::flow::{
    fmt_num, integrate_backward, integrate_from, step_propagator, FlowOptions,
};
use crate::system::{BoxSet, ControlSignal, SystemSpec};

/// Largest principal angle between the column spans of two orthonormal
/// frames of equal width.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 {
        return 0.0;
    }
    let residual = b - a * (a.transpose() * b);
    let s = residual.clone().svd(false, false).singular_values;
    s.iter().copied().fold(0.0f64, f64::max).min(1.0).asin()
}

/// Smallest principal angle between two subspaces (pi/2 if either is trivial).
pub fn min_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 || b.ncols() == 0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let s = (a.transpose() * b).svd(false, false).singular_values;
    s.iter().copied().fold(0.0f64, f64::max).min(1.0).acos()
}

#[derive(Debug, Clone)]
pub struct SplittingOptions {
    /// Initial horizon `T`.
    pub horizon: f64,
    /// Doubling stops above this horizon.
    pub max_horizon: f64,
    /// Allowed distance between the estimates at horizons `T` and `T/2`.
    pub tol_split: f64,
    /// `(d-, d+)`; when `None`, `d+` is the split of the finite-time
    /// spectrum with the largest margin `min(chi_{d+}, -chi_{d+ + 1})` around zero.
    pub dims: Option<(usize, usize)>,
    /// Region the window trajectory must stay in.
    pub region: Option<BoxSet>,
    pub flow: FlowOptions,
}

impl Default for SplittingOptions {
    fn default() -> Self {
        SplittingOptions {
            horizon: 10.0,
            max_horizon: 200.0,
            tol_split: 1e-6,
            dims: None,
            region: None,
            flow: FlowOptions::default(),
        }
    }
}

/// Minimum gap between consecutive finite-time exponents at the split.
pub const MIN_GAP: f64 = 1e-3;

/// Estimated splitting on the integrator nodes of `[0, tau]`.
#[derive(Debug, Clone)]
pub struct Splitting {
    h: f64,
    dims: (usize, usize),
    states: Vec<DVector<f64>>,
    steps: Vec<DMatrix<f64>>,
    plus: Vec<DMatrix<f64>>,
    minus: Vec<DMatrix<f64>>,
    control: ControlSignal,
    /// Horizon `T` at which the iteration converged.
    pub horizon: f64,
    /// Distance between the estimates at `T` and `T/2`.
    pub convergence: f64,
    /// Finite-time exponents over the whole window, descending.
    pub exponents: Vec<f64>,
    /// Dichotomy constant; taken as 1 (only asymptotic rates are used).
    pub c_hat: f64,
    /// Dichotomy rate from the finite-time exponents at the split.
    pub lambda_hat: f64,
    /// Smallest angle between `E+` and `E-` over the nodes.
    pub angle_floor: f64,
}

impl Splitting {
    pub fn dim(&self) -> usize {
        self.dims.0 + self.dims.1
    }

    /// `(d-, d+)`.
    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plus.is_empty()
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn reference_state(&self) -> &[f64] {
        self.states[0].as_slice()
    }

    pub fn state(&self, k: usize) -> &DVector<f64> {
        &self.states[k]
    }

    pub fn control(&self) -> &ControlSignal {
        &self.control
    }

    /// One-step propagators along `[0, tau]`.
    pub fn step_matrices(&self) -> &[DMatrix<f64>] {
        &self.steps
    }

    pub fn plus_basis(&self, k: usize) -> &DMatrix<f64> {
        &self.plus[k]
    }

    pub fn minus_basis(&self, k: usize) -> &DMatrix<f64> {
        &self.minus[k]
    }

    /// Largest angle between `M_k E(t_k)` and `E(t_{k+1})` over both bundles.
    pub fn invariance_defect(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for (k, m) in self.steps.iter().enumerate() {
            for (now, next) in [(&self.plus, &self.plus), (&self.minus, &self.minus)] {
                if now[k].ncols() == 0 {
                    continue;
                }
                let (pushed, _) = orthonormalize(m * &now[k])?;
                worst = worst.max(subspace_distance(&pushed, &next[k + 1]));
            }
        }
        Ok(worst)
    }

    /// CSV with columns `t`, `bplus_i_j`, `bminus_i_j` (row-major) and the
    /// smallest principal angle between the bundles.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let (dm, dp) = self.dims;
        let mut header = vec!["t".to_string()];
        for (name, cols) in [("bplus", dp), ("bminus", dm)] {
            for i in 1..=d {
                header.extend((1..=cols).map(|j| format!("{name}_{i}_{j}")));
            }
        }
        header.push("angle".into());
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![fmt_num(self.time(k))];
            for b in [&self.plus[k], &self.minus[k]] {
                for i in 0..d {
                    row.extend((0..b.ncols()).map(|j| fmt_num(b[(i, j)])));
                }
            }
            row.push(fmt_num(min_principal_angle(&self.plus[k], &self.minus[k])));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Trajectory and one-step propagators on the nodes of `[-T, tau + T]`.
/// Node `i` sits at time `(i - past) h`.
struct Window {
    past: usize,
    n: usize,
    states: Vec<DVector<f64>>,
    steps: Vec<DMatrix<f64>>,
}

impl Window {
    fn nodes(&self) -> usize {
        self.states.len()
    }
}

fn closes_up(spec: &SystemSpec, u: &ControlSignal, x: &[f64], opts: &FlowOptions) -> Result<bool> {
    let Some(p) = u.period() else { return Ok(false) };
    let seg = integrate_from(spec, 0.0, x, u, p, false, opts)?;
    let scale = 1.0 + DVector::from_column_slice(x).norm();
    Ok((seg.final_state() - DVector::from_column_slice(x)).norm() <= 1e-8 * scale)
}

fn build_window(
    spec: &SystemSpec,
    u: &ControlSignal,
    x_ref: &[f64],
    tau: f64,
    horizon: f64,
    opts: &SplittingOptions,
) -> Result<Window> {
    let fo = &opts.flow;
    let h = fo.step(u);
    let n = crate::system::steps_in(tau, h)?;
    let past = (horizon / h - 1e-9).ceil().max(0.0) as usize;
    let total = past + n + past;

    let (states, steps) = if closes_up(spec, u, x_ref, fo)? {
        // periodic lifted point: repeat one period of the trajectory
        let p = u.period().expect("periodic");
        let seg = integrate_from(spec, 0.0, x_ref, u, p, true, fo)?;
        let per = seg.len() - 1;
        let at = |i: usize| (i as i64 - past as i64).rem_euclid(per as i64) as usize;
        let states = (0..=total).map(|i| seg.state(at(i)).clone()).collect();
        let steps = (0..total).map(|i| seg.step_matrices()[at(i)].clone()).collect();
        (states, steps)
    } else {
        let back = integrate_backward(spec, 0.0, x_ref, u, past as f64 * h, fo)?;
        let fwd = integrate_from(spec, 0.0, x_ref, u, (n + past) as f64 * h, true, fo)?;
        let mut states: Vec<DVector<f64>> = back.into_iter().rev().collect();
        let mut steps = Vec::with_capacity(total);
        for (i, x) in states.iter().take(past).enumerate() {
            let node = i as i64 - past as i64;
            let ustep = node.div_euclid(fo.substeps as i64);
            let uk = u.value_at_step(ustep).ok_or_else(|| {
                Error::InvalidArgument(format!("control undefined at step {ustep}"))
            })?;
            steps.push(step_propagator(spec, x.as_slice(), uk, h)?.1);
        }
        states.pop();
        states.extend(fwd.states().iter().cloned());
        steps.extend(fwd.step_matrices().iter().cloned());
        (states, steps)
    };
    if let Some(q) = &opts.region {
        for (i, x) in states.iter().enumerate() {
            if !q.contains_tol(x.as_slice(), 1e-9) {
                return Err(Error::Escapes { t: (i as f64 - past as f64) * h });
            }
        }
    }
    Ok(Window { past, n, states, steps })
}

/// Deterministic generic orthonormal `d x k` frame.
fn generic_frame(d: usize, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Ok(DMatrix::zeros(d, 0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f4a3e);
    let g = DMatrix::from_fn(d, k, |_, _| rng.random_range(-1.0..1.0));
    Ok(orthonormalize(g)?.0)
}

/// Frames at the nodes `past ..= past + n`, iterated forward from node `start`.
fn forward_sweep(w: &Window, start: usize, k: usize) -> Result<Vec<DMatrix<f64>>> {
    let d = w.states[0].len();
    let mut frame = generic_frame(d, k)?;
    let mut out = Vec::with_capacity(w.n + 1);
    for i in start..=w.past + w.n {
        if i >= w.past {
            out.push(frame.clone());
        }
        if i < w.past + w.n && k > 0 {
            frame = orthonormalize(&w.steps[i] * &frame)?.0;
        }
    }
    Ok(out)
}

/// Frames at the nodes `past ..= past + n`, iterated backward from node `start`.
fn backward_sweep(w: &Window, start: usize, k: usize) -> Result<Vec<DMatrix<f64>>> {
    let d = w.states[0].len();
    let mut frame = generic_frame(d, k)?;
    let mut out = vec![DMatrix::zeros(d, k); w.n + 1];
    let mut i = start;
    loop {
        if i <= w.past + w.n {
            out[i - w.past] = frame.clone();
        }
        if i == w.past {
            break;
        }
        if k > 0 {
            let pulled = w.steps[i - 1]
                .clone()
                .lu()
                .solve(&frame)
                .ok_or_else(|| Error::Linalg("singular one-step propagator".into()))?;
            frame = orthonormalize(pulled)?.0;
        }
        i -= 1;
    }
    Ok(out)
}

/// Finite-time exponents by QR iteration of a full frame across the window.
fn window_exponents(w: &Window, h: f64) -> Result<Vec<f64>> {
    let d = w.states[0].len();
    let mut q = DMatrix::<f64>::identity(d, d);
    let mut sums = vec![0.0; d];
    for m in &w.steps {
        let qr = (m * &q).qr();
        let r = qr.r();
        for (i, s) in sums.iter_mut().enumerate() {
            *s += r[(i, i)].abs().ln();
        }
        q = qr.q();
    }
    let span = w.steps.len() as f64 * h;
    let mut out: Vec<f64> = sums.iter().map(|s| if span > 0.0 { s / span } else { 0.0 }).collect();
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

fn choose_dims(exponents: &[f64], requested: Option<(usize, usize)>) -> Result<(usize, usize)> {
    let d = exponents.len();
    let dp = match requested {
        Some((dm, dp)) => {
            if dm + dp != d {
                return Err(Error::DimensionMismatch(format!(
                    "dims ({dm}, {dp}) do not add up to {d}"
                )));
            }
            dp
        }
        None => {
            // split with the widest gap around zero
            let rate = |dp: usize| {
                let above = if dp == 0 { f64::INFINITY } else { exponents[dp - 1] };
                let below = if dp == d { f64::INFINITY } else { -exponents[dp] };
                above.min(below)
            };
            let dp = (0..=d).max_by(|&a, &b| rate(a).total_cmp(&rate(b))).unwrap_or(0);
            if rate(dp) < MIN_GAP {
                return Err(Error::DimensionMismatch(format!(
                    "no hyperbolic gap (finite-time exponents {exponents:?})"
                )));
            }
            dp
        }
    };
    if dp > 0 && dp < d && exponents[dp - 1] - exponents[dp] < MIN_GAP {
        return Err(Error::DimensionMismatch(format!(
            "no spectral gap at d+ = {dp} (finite-time exponents {exponents:?})"
        )));
    }
    Ok((d - dp, dp))
}

/// Estimates the splitting along `phi(t, x_ref, u)`, `t in [0, tau]`.
///
/// The control must be defined on `[-T, tau + T]` for every horizon tried.
/// When `u` is periodic and `x_ref` closes up after one period, the window
/// repeats that period; otherwise the past is integrated backward from
/// `x_ref`, which requires the backward trajectory to stay bounded.
pub fn estimate_splitting(
    spec: &SystemSpec,
    u: &ControlSignal,
    x_ref: &[f64],
    tau: f64,
    opts: &SplittingOptions,
) -> Result<Splitting> {
    if !(opts.horizon > 0.0) {
        return Err(Error::InvalidArgument("splitting horizon must be positive".into()));
    }
    let h = opts.flow.step(u);
    let mut horizon = opts.horizon;
    loop {
        let w = build_window(spec, u, x_ref, tau, horizon, opts)?;
        let exponents = window_exponents(&w, h)?;
        let dims = choose_dims(&exponents, opts.dims)?;
        let (dm, dp) = dims;
        let end = w.nodes() - 1;
        let half = w.past / 2;
        let plus = forward_sweep(&w, 0, dp)?;
        let plus_half = forward_sweep(&w, w.past - half, dp)?;
        let minus = backward_sweep(&w, end, dm)?;
        let minus_half = backward_sweep(&w, w.past + w.n + half, dm)?;
        let convergence = plus
            .iter()
            .zip(&plus_half)
            .chain(minus.iter().zip(&minus_half))
            .map(|(a, b)| subspace_distance(a, b))
            .fold(0.0f64, f64::max);
        if convergence <= opts.tol_split {
            let angle_floor = plus
                .iter()
                .zip(&minus)
                .map(|(p, m)| min_principal_angle(p, m))
                .fold(std::f64::consts::FRAC_PI_2, f64::min);
            let mut rates = Vec::new();
            if dp > 0 {
                rates.push(exponents[dp - 1]);
            }
            if dm > 0 {
                rates.push(-exponents[dp]);
            }
            let lambda_hat = rates.into_iter().fold(f64::INFINITY, f64::min);
            let k0 = w.past;
            return Ok(Splitting {
                h,
                dims,
                states: w.states[k0..=k0 + w.n].to_vec(),
                steps: w.steps[k0..k0 + w.n].to_vec(),
                plus,
                minus,
                control: u.clone(),
                horizon,
                convergence,
                exponents,
                c_hat: 1.0,
                lambda_hat,
                angle_floor,
            });
        }
        if horizon * 2.0 > opts.max_horizon {
            return Err(Error::NonConvergence {
                what: format!("splitting iteration up to horizon {horizon}"),
                residual: convergence,
            });
        }
        horizon *= 2.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bundle {
    Unstable,
    Stable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub bundle: Bundle,
    /// Base time of the probe.
    pub t: f64,
    pub v: Vec<f64>,
    /// Fitted expansion (unstable) or contraction (stable) rate.
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperbolicityReport {
    pub c_hat: f64,
    pub lambda_hat: f64,
    /// Smallest `(1/tau_h) log |Phi v|` over unstable probes.
    pub worst_expansion: Option<f64>,
    /// Smallest `-(1/tau_h) log |Phi v|` over stable probes.
    pub worst_contraction: Option<f64>,
    pub min_rate: f64,
    pub probes: usize,
    pub violations: Vec<Violation>,
}

impl HyperbolicityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<HyperbolicityReport> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::NotHyperbolic(Box::new(self)))
        }
    }
}

/// Least-squares line through `(t_j, g_j)`: `(intercept, slope)`.
fn fit_line(t: &[f64], g: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let mg = g.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|v| (v - mt).powi(2)).sum();
    let sxy: f64 = t.iter().zip(g).map(|(a, b)| (a - mt) * (b - mg)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (mg - slope * mt, slope)
}

/// Probes (H2) along the splitting: for unit vectors in `E+` (resp. `E-`)
/// at a few base nodes, fits `log |Phi v| ~ log c + rate t` over
/// `probe_horizon` and flags probes whose expansion (contraction) rate is
/// below `min_rate`.
pub fn verify_hyperbolicity(
    s: &Splitting,
    probe_horizon: f64,
    min_rate: f64,
) -> Result<HyperbolicityReport> {
    let steps = (probe_horizon / s.h).round() as usize;
    if steps == 0 || steps > s.steps.len() {
        return Err(Error::InvalidArgument(format!(
            "probe horizon {probe_horizon} must lie in (0, {}]",
            s.steps.len() as f64 * s.h
        )));
    }
    let bases: Vec<usize> = {
        let last = s.steps.len() - steps;
        let mut b: Vec<usize> = (0..5).map(|i| i * last / 4).collect();
        b.dedup();
        b
    };
    let times: Vec<f64> = (0..=steps).map(|j| j as f64 * s.h).collect();
    let mut fits = Vec::new();
    for &k0 in &bases {
        for (bundle, basis) in [(Bundle::Unstable, &s.plus[k0]), (Bundle::Stable, &s.minus[k0])] {
            for v in probe_vectors(basis) {
                let mut w = v.clone();
                let mut acc = 0.0;
                let mut g = Vec::with_capacity(steps + 1);
                g.push(0.0);
                for m in &s.steps[k0..k0 + steps] {
                    w = m * w;
                    let n = w.norm();
                    acc += n.ln();
                    w /= n;
                    g.push(acc);
                }
                if bundle == Bundle::Stable {
                    g.iter_mut().for_each(|x| *x = -*x);
                }
                fits.push((bundle, k0, v, g));
            }
        }
    }
    let mut lambda_hat = f64::INFINITY;
    let mut worst = [None::<f64>, None::<f64>];
    let mut violations = Vec::new();
    for (bundle, k0, v, g) in &fits {
        let (_, rate) = fit_line(&times, g);
        lambda_hat = lambda_hat.min(rate);
        let slot = &mut worst[usize::from(*bundle == Bundle::Stable)];
        let end_rate = g[steps] / times[steps];
        *slot = Some(slot.map_or(end_rate, |w: f64| w.min(end_rate)));
        if !(rate >= min_rate) {
            violations.push(Violation {
                bundle: *bundle,
                t: s.time(*k0),
                v: v.iter().copied().collect(),
                rate,
            });
        }
    }
    let c_hat = fits
        .iter()
        .flat_map(|(_, _, _, g)| g.iter().zip(&times).map(|(gj, tj)| (gj - lambda_hat * tj).exp()))
        .fold(f64::INFINITY, f64::min);
    Ok(HyperbolicityReport {
        c_hat: if c_hat.is_finite() { c_hat } else { 1.0 },
        lambda_hat: if lambda_hat.is_finite() { lambda_hat } else { 0.0 },
        worst_expansion: worst[0],
        worst_contraction: worst[1],
        min_rate,
        probes: fits.len(),
        violations,
    })
}

/// Basis columns plus the normalized sum and alternating sum.
fn probe_vectors(basis: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let k = basis.ncols();
    let mut out: Vec<DVector<f64>> = (0..k).map(|j| basis.column(j).into_owned()).collect();
    if k > 1 {
        let sum: DVector<f64> = out.iter().fold(DVector::zeros(basis.nrows()), |a, v| a + v);
        let alt: DVector<f64> = out
            .iter()
            .enumerate()
            .fold(DVector::zeros(basis.nrows()), |a, (j, v)| if j % 2 == 0 { a + v } else { a - v });
        out.push(sum.normalize());
        out.push(alt.normalize());
    }
    out
}

/// Empirical Lipschitz constant of `E+` between two splittings over their
/// common nodes, relative to a signal distance `delta`.
pub fn continuity_constant(a: &Splitting, b: &Splitting, delta: f64) -> f64 {
    let dist = a
        .plus
        .iter()
        .zip(&b.plus)
        .map(|(p, q)| subspace_distance(p, q))
        .fold(0.0f64, f64::max);
    if delta > 0.0 {
        dist / delta
    } else {
        f64::INFINITY
    }
}

/// Source of splittings for the lower-bound and volume computations.
pub trait SplittingProvider: Sync {
    fn splitting(
        &self,
        spec: &SystemSpec,
        u: &ControlSignal,
        x: &[f64],
        tau: f64,
    ) -> Result<Splitting>;
}

/// Estimates splittings with [`estimate_splitting`].
#[derive(Debug, Clone, Default)]
pub struct EstimatedSplitting {
    pub options: SplittingOptions,
}

impl SplittingProvider for EstimatedSplitting {
    fn splitting(
        &self,
        spec: &SystemSpec,
        u: &ControlSignal,
        x: &[f64],
        tau: f64,
    ) -> Result<Splitting> {
        estimate_splitting(spec, u, x, tau, &self.options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::find_periodic_orbit;
    use crate::flow::NewtonOptions;

    fn linear(rows: &[&[&str]], m: usize) -> SystemSpec {
        SystemSpec::from_strings(2, rows, &vec![-1.0; m], &vec![1.0; m]).unwrap()
    }

    fn diag() -> SystemSpec {
        linear(&[&["1.5*x1", "-0.7*x2"], &["1", "0"], &["0", "1"]], 2)
    }

    fn opts(dims: Option<(usize, usize)>) -> SplittingOptions {
        SplittingOptions { horizon: 20.0, dims, ..Default::default() }
    }

    #[test]
    fn diagonal_system_splits_along_axes() {
        let s = diag();
        let u = ControlSignal::constant(vec![0.0, 0.0], 0.5, s.control_box()).unwrap();
        let sp = estimate_splitting(&s, &u, &[0.0, 0.0], 2.0, &opts(None)).unwrap();
        assert_eq!(sp.dims(), (1, 1));
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        for k in 0..sp.len() {
            assert!(subspace_distance(sp.plus_basis(k), &e1) < 1e-9);
            assert!(subspace_distance(sp.minus_basis(k), &e2) < 1e-9);
        }
        assert!((sp.angle_floor - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
        assert!(sp.invariance_defect().unwrap() < 1e-4);

        let rep = verify_hyperbolicity(&sp, 2.0, 0.05).unwrap();
        assert!(rep.passed());
        assert!((rep.lambda_hat - 0.7).abs() < 0.035);
        assert!((rep.c_hat - 1.0).abs() < 0.05);
    }

    #[test]
    fn shear_coupled_stable_direction_matches_eigenvector() {
        let s = linear(&[&["x1 + x2", "-x2"], &["1", "0"], &["0", "1"]], 2);
        let u = ControlSignal::constant(vec![0.0, 0.0], 0.5, s.control_box()).unwrap();
        let sp = estimate_splitting(&s, &u, &[0.0, 0.0], 1.0, &opts(Some((1, 1)))).unwrap();
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let stable = DMatrix::from_column_slice(2, 1, &[1.0 / 5f64.sqrt(), -2.0 / 5f64.sqrt()]);
        assert!(subspace_distance(sp.plus_basis(0), &e1) < 1e-8);
        assert!(subspace_distance(sp.minus_basis(0), &stable) < 1e-8);
    }

    #[test]
    fn full_unstable_dims_give_whole_space() {
        let s = diag();
        let u = ControlSignal::constant(vec![0.0, 0.0], 0.5, s.control_box()).unwrap();
        let sp = estimate_splitting(&s, &u, &[0.0, 0.0], 1.0, &opts(Some((0, 2)))).unwrap();
        assert_eq!(sp.plus_basis(0).ncols(), 2);
        assert_eq!(sp.minus_basis(0).ncols(), 0);
        let tr = crate::cocycle::det_cocycle(&s, &u, &[0.0, 0.0], 1.0, Some(&sp), &FlowOptions::default())
            .unwrap();
        assert!((tr.final_value() - 0.8).abs() < 1e-6);
    }

    #[test]
    fn zero_exponent_fails_verification() {
        let s = linear(&[&["0", "-x2"], &["1", "0"]], 1);
        let u = ControlSignal::constant(vec![0.0], 0.5, s.control_box()).unwrap();
        let sp = estimate_splitting(&s, &u, &[0.0, 0.0], 2.0, &opts(Some((1, 1)))).unwrap();
        let rep = verify_hyperbolicity(&sp, 2.0, 0.05).unwrap();
        assert!(!rep.passed());
        assert!(rep.violations.iter().all(|v| v.bundle == Bundle::Unstable));
        assert!(matches!(rep.into_result(), Err(Error::NotHyperbolic(_))));

        let id = SystemSpec::from_strings(1, &[&["0"]], &[], &[]).unwrap();
        let sp = estimate_splitting(&id, &ControlSignal::autonomous(0.5), &[0.3], 1.0, &opts(Some((0, 1))))
            .unwrap();
        assert!(!verify_hyperbolicity(&sp, 1.0, 1e-3).unwrap().passed());
    }

    #[test]
    fn missing_gap_is_a_dimension_mismatch() {
        let id = SystemSpec::from_strings(2, &[&["0", "0"]], &[], &[]).unwrap();
        let r = estimate_splitting(&id, &ControlSignal::autonomous(0.5), &[0.0, 0.0], 1.0, &opts(Some((1, 1))));
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
        let r = estimate_splitting(&id, &ControlSignal::autonomous(0.5), &[0.0, 0.0], 1.0, &opts(Some((1, 2))));
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn unstable_bundle_matches_floquet_eigenvector() {
        let s = SystemSpec::from_strings(
            2,
            &[&["x1 + x2^2 - 0.3*x1*x2", "-x2"], &["0", "1"]],
            &[-0.5],
            &[0.5],
        )
        .unwrap();
        let u = ControlSignal::periodic(
            0.25,
            (0..8).map(|k| vec![0.4 * (std::f64::consts::PI * k as f64 / 4.0).cos()]).collect(),
            s.control_box(),
        )
        .unwrap();
        let fo = FlowOptions::default();
        let orbit = find_periodic_orbit(&s, &u, &[0.0, 0.0], &fo, &NewtonOptions::default()).unwrap();
        let sp = estimate_splitting(&s, &u, orbit.x0.as_slice(), 2.0, &opts(None)).unwrap();
        assert_eq!(sp.dims(), (1, 1));
        let eig = orbit.monodromy().clone().complex_eigenvalues();
        let mu = eig.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
        let null = (orbit.monodromy() - DMatrix::identity(2, 2) * mu).svd(false, true);
        let vt = null.v_t.unwrap();
        let v = vt.row(1).transpose();
        let v = DMatrix::from_column_slice(2, 1, v.as_slice());
        assert!(subspace_distance(sp.plus_basis(0), &v) < 1e-3);
        assert!(sp.invariance_defect().unwrap() < 1e-2);
        assert!(verify_hyperbolicity(&sp, 2.0, 0.05).unwrap().passed());
    }

    #[test]
    fn escaping_window_is_rejected() {
        let s = diag();
        let u = ControlSignal::constant(vec![0.0, 0.0], 0.5, s.control_box()).unwrap();
        let mut o = opts(None);
        o.horizon = 2.0;
        o.region = Some(BoxSet::symmetric(2, 0.5).unwrap());
        // equilibrium at the origin stays, an off-equilibrium point leaves
        assert!(estimate_splitting(&s, &u, &[0.0, 0.0], 1.0, &o).is_ok());
        let r = estimate_splitting(&s, &u, &[0.1, 0.0], 1.0, &o);
        assert!(matches!(r, Err(Error::Escapes { .. })));
    }

    #[test]
    fn csv_columns() {
        let s = diag();
        let u = ControlSignal::constant(vec![0.0, 0.0], 0.5, s.control_box()).unwrap();
        let sp = estimate_splitting(&s, &u, &[0.0, 0.0], 1.0, &opts(None)).unwrap();
        let mut buf = Vec::new();
        sp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,bplus_1_1,bplus_2_1,bminus_1_1,bminus_2_1,angle");
        assert_eq!(text.lines().count(), sp.len() + 1);
    }
}

//! Cocycles over the control flow.
//!
//! * exterior-power cocycle `alpha_t(u, x) = log+ |(d phi_{t,u})_x^wedge|`,
//!   where the operator norm on the full exterior algebra is the largest
//!   partial product `sigma_1 ... sigma_j` of singular values;
//! * determinant cocycles `log |det (d phi_{t,u})_x restricted to E|` for an
//!   invariant subspace family `E` (the full space or an unstable bundle);
//! * Floquet exponents of periodic trajectories and the controllability
//!   Gramian of the linearization.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{fmt_num, integrate_from, FlowOptions, FlowSegment};
use crate::splitting::Splitting;
use crate::system::{ControlSignal, SystemSpec};

/// Descending singular values.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Linalg("SVD of a matrix with non-finite entries".into()));
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// `max_j sigma_1 ... sigma_j` and the maximizing `j` (1-based).
pub fn exterior_norm(m: &DMatrix<f64>) -> Result<(f64, usize)> {
    let (log_norm, j) = log_exterior_norm(m)?;
    Ok((log_norm.exp(), j))
}

/// Logarithm of [`exterior_norm`], computed without forming the products.
pub fn log_exterior_norm(m: &DMatrix<f64>) -> Result<(f64, usize)> {
    let s = singular_values(m)?;
    let mut best = (f64::NEG_INFINITY, 1);
    let mut acc = 0.0;
    for (j, sigma) in s.iter().enumerate() {
        acc += sigma.ln();
        if acc > best.0 {
            best = (acc, j + 1);
        }
    }
    Ok(best)
}

const RESCALE_AT: f64 = 1e100;

/// Accumulates `Phi = M_{k-1} ... M_0` from one-step propagators together
/// with `Phi^{-1}` and `log |det Phi|`.
///
/// Partial singular-value products for `j > d/2` are recovered as
/// `|det Phi| * sigma_1(Phi^{-1}) ... sigma_{d-j}(Phi^{-1})`, which keeps them
/// accurate when `Phi` is far from normal or badly conditioned. The lower
/// half comes straight from the SVD of `Phi`, so for `d >= 4` products with
/// `2 <= j <= d/2` inherit the SVD's absolute accuracy.
#[derive(Debug, Clone)]
pub struct ExteriorTracker {
    phi: DMatrix<f64>,
    phi_log_scale: f64,
    inv: DMatrix<f64>,
    inv_log_scale: f64,
    log_det: f64,
}

impl ExteriorTracker {
    pub fn new(d: usize) -> Self {
        ExteriorTracker {
            phi: DMatrix::identity(d, d),
            phi_log_scale: 0.0,
            inv: DMatrix::identity(d, d),
            inv_log_scale: 0.0,
            log_det: 0.0,
        }
    }

    pub fn push(&mut self, step: &DMatrix<f64>) -> Result<()> {
        let lu = step.clone().lu();
        let det = lu.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Linalg("singular one-step propagator".into()));
        }
        let step_inv = lu.try_inverse().ok_or_else(|| Error::Linalg("singular propagator".into()))?;
        self.log_det += det.abs().ln();
        self.phi = step * &self.phi;
        self.inv = &self.inv * step_inv;
        rescale(&mut self.phi, &mut self.phi_log_scale);
        rescale(&mut self.inv, &mut self.inv_log_scale);
        Ok(())
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `(log |Phi^wedge|, argmax j)`.
    pub fn log_norm(&self) -> Result<(f64, usize)> {
        let d = self.phi.nrows();
        let s = singular_values(&self.phi)?;
        let r = singular_values(&self.inv)?;
        let mut best = (f64::NEG_INFINITY, 1);
        let mut lower = 0.0;
        for j in 1..=d {
            let value = if j == d {
                self.log_det
            } else if 2 * j <= d {
                lower += s[j - 1].ln() + self.phi_log_scale;
                lower
            } else {
                self.log_det
                    + r[..d - j].iter().map(|v| v.ln() + self.inv_log_scale).sum::<f64>()
            };
            if value > best.0 {
                best = (value, j);
            }
        }
        Ok(best)
    }

    /// `alpha = log+ |Phi^wedge|`.
    pub fn alpha(&self) -> Result<f64> {
        Ok(self.log_norm()?.0.max(0.0))
    }
}

fn rescale(m: &mut DMatrix<f64>, log_scale: &mut f64) {
    let n = m.amax();
    if n > RESCALE_AT || (n < 1.0 / RESCALE_AT && n > 0.0) {
        *m /= n;
        *log_scale += n.ln();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CocycleKind {
    Exterior,
    Determinant,
    User,
}

/// Values `a(t_k)` of a cocycle along a trajectory (nats).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocycleTrace {
    pub kind: CocycleKind,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub x0: Vec<f64>,
    pub control: ControlSignal,
}

impl CocycleTrace {
    pub fn final_value(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }

    /// `a(T) / T` at the last sample (0 for an empty horizon).
    pub fn rate(&self) -> f64 {
        match self.times.last() {
            Some(t) if *t > self.times[0] => self.final_value() / (t - self.times[0]),
            _ => 0.0,
        }
    }

    /// CSV with columns `t, value, rate`; the rate is blank at `t = 0`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,value,rate")?;
        let t0 = self.times.first().copied().unwrap_or(0.0);
        for (t, v) in self.times.iter().zip(&self.values) {
            let rate = if *t > t0 { fmt_num(v / (t - t0)) } else { String::new() };
            writeln!(w, "{},{},{}", fmt_num(*t), fmt_num(*v), rate)?;
        }
        Ok(())
    }
}

/// `alpha_t` at every node of a segment integrated with variational data.
pub fn alpha_values(seg: &FlowSegment) -> Result<Vec<f64>> {
    let d = seg.state(0).len();
    let mut tracker = ExteriorTracker::new(d);
    let mut out = Vec::with_capacity(seg.len());
    out.push(0.0);
    for m in seg.step_matrices() {
        tracker.push(m)?;
        out.push(tracker.alpha()?);
    }
    Ok(out)
}

/// `alpha_T` after applying the given one-step propagators in order.
pub fn alpha_from_steps<'a, I>(d: usize, steps: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a DMatrix<f64>>,
{
    let mut tracker = ExteriorTracker::new(d);
    for m in steps {
        tracker.push(m)?;
    }
    tracker.alpha()
}

/// Exterior-power cocycle `alpha_t(u, x0)` on `[0, tau]`.
pub fn alpha(
    spec: &SystemSpec,
    u: &ControlSignal,
    x0: &[f64],
    tau: f64,
    opts: &FlowOptions,
) -> Result<CocycleTrace> {
    let seg = integrate_from(spec, 0.0, x0, u, tau, true, opts)?;
    Ok(CocycleTrace {
        kind: CocycleKind::Exterior,
        times: seg.times(),
        values: alpha_values(&seg)?,
        x0: x0.to_vec(),
        control: u.clone(),
    })
}

/// Pushes an orthonormal frame through one-step propagators, accumulating
/// `log |det|` of the induced maps between the spanned subspaces.
///
/// Equivalent to half the log of the Gram determinant of the pushed-forward
/// frame; re-orthonormalizing every step keeps it well conditioned.
#[derive(Debug, Clone)]
pub struct FrameTracker {
    frame: DMatrix<f64>,
    log_det: f64,
}

/// Ratio `min |r_ii| / max |r_ii|` below which a pushed frame counts as degenerate.
pub const DEGENERATE_FRAME: f64 = 1e-13;

impl FrameTracker {
    pub fn new(frame: DMatrix<f64>) -> Self {
        FrameTracker { frame, log_det: 0.0 }
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn push(&mut self, step: &DMatrix<f64>) -> Result<()> {
        if self.frame.ncols() == 0 {
            return Ok(());
        }
        let (q, log_det) = orthonormalize(step * &self.frame)?;
        self.frame = q;
        self.log_det += log_det;
        Ok(())
    }
}

/// Thin QR with positive diagonal; returns `(Q, log |det R|)`.
pub(crate) fn orthonormalize(g: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let k = g.ncols();
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    let diag: Vec<f64> = (0..k).map(|i| r[(i, i)]).collect();
    let max = diag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if !(max > 0.0) || !min.is_finite() || min / max < DEGENERATE_FRAME {
        return Err(Error::Linalg(format!(
            "degenerate frame (condition estimate {:.3e})",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    for (i, v) in diag.iter().enumerate() {
        if *v < 0.0 {
            let mut col = q.column_mut(i);
            col *= -1.0;
        }
    }
    Ok((q, diag.iter().map(|v| v.abs().ln()).sum()))
}

/// Determinant cocycle `log |det (d phi_{t,u})_{x0}|_{E(0)} -> E(t)|` on `[0, tau]`.
///
/// `E` is the unstable bundle of `splitting` when given (its basis at time 0
/// is used and pushed forward), otherwise the whole tangent space.
pub fn det_cocycle(
    spec: &SystemSpec,
    u: &ControlSignal,
    x0: &[f64],
    tau: f64,
    splitting: Option<&Splitting>,
    opts: &FlowOptions,
) -> Result<CocycleTrace> {
    let d = spec.dim();
    let frame = match splitting {
        Some(s) => {
            if s.dim() != d {
                return Err(Error::DimensionMismatch(format!(
                    "splitting of dimension {} for a {d}-dimensional system",
                    s.dim()
                )));
            }
            let x_ref = s.reference_state();
            let gap = x_ref.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if gap > 1e-9 * (1.0 + x_ref.iter().map(|v| v * v).sum::<f64>().sqrt()) {
                return Err(Error::InvalidArgument(
                    "splitting was estimated at a different initial state".into(),
                ));
            }
            s.plus_basis(0).clone()
        }
        None => DMatrix::identity(d, d),
    };
    let seg = integrate_from(spec, 0.0, x0, u, tau, true, opts)?;
    let mut tracker = FrameTracker::new(frame);
    let mut values = Vec::with_capacity(seg.len());
    values.push(0.0);
    for m in seg.step_matrices() {
        tracker.push(m)?;
        values.push(tracker.log_det());
    }
    Ok(CocycleTrace {
        kind: CocycleKind::Determinant,
        times: seg.times(),
        values,
        x0: x0.to_vec(),
        control: u.clone(),
    })
}

/// Floquet exponents `(1/T_p) log |mu|` with algebraic multiplicities,
/// sorted descending. Exponents within `1e-6 (1 + |lambda|)` are merged.
pub fn floquet_exponents(monodromy: &DMatrix<f64>, period: f64) -> Result<Vec<(f64, usize)>> {
    if !(period > 0.0) {
        return Err(Error::InvalidArgument("period must be positive".into()));
    }
    if monodromy.iter().any(|v| !v.is_finite()) {
        return Err(Error::Linalg("monodromy has non-finite entries".into()));
    }
    let schur = monodromy
        .clone()
        .try_schur(1e-15, 100_000)
        .ok_or_else(|| Error::Linalg("eigenvalue iteration did not converge".into()))?;
    let mut exps: Vec<f64> =
        schur.complex_eigenvalues().iter().map(|mu| mu.norm().ln() / period).collect();
    exps.sort_by(|a, b| b.total_cmp(a));
    let mut out: Vec<(f64, usize)> = Vec::new();
    for e in exps {
        match out.last_mut() {
            Some((rep, mult)) if (e - *rep).abs() <= 1e-6 * (1.0 + rep.abs()) => *mult += 1,
            _ => out.push((e, 1)),
        }
    }
    Ok(out)
}

/// Sum of the positive Floquet exponents counted with multiplicity.
pub fn positive_exponent_sum(exponents: &[(f64, usize)]) -> f64 {
    exponents.iter().filter(|(e, _)| *e > 0.0).map(|(e, m)| e * *m as f64).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GramianReport {
    pub rank: usize,
    /// Smallest singular value counted in the rank (0 when the rank is 0).
    pub smallest_retained: f64,
    pub singular_values: Vec<f64>,
    /// Full rank: the linearization is controllable on the interval.
    pub regular: bool,
}

/// Relative singular-value cutoff for the Gramian rank.
pub const GRAMIAN_RANK_TOL: f64 = 1e-8;

/// Numerical rank of `W = int_{t1}^{t2} Phi(t2, s) B(s) B(s)^T Phi(t2, s)^T ds`
/// along `phi(., x0, u)`, by the trapezoidal rule on the integrator nodes.
pub fn gramian_rank(
    spec: &SystemSpec,
    u: &ControlSignal,
    x0: &[f64],
    t1: f64,
    t2: f64,
    opts: &FlowOptions,
) -> Result<GramianReport> {
    if !(t1 < t2) || t1 < 0.0 {
        return Err(Error::InvalidArgument(format!("need 0 <= t1 < t2, got [{t1}, {t2}]")));
    }
    let seg = integrate_from(spec, 0.0, x0, u, t2, true, opts)?;
    let h = seg.step_size();
    let k1 = (t1 / h).round() as usize;
    if (k1 as f64 * h - t1).abs() > 1e-9 * t2 {
        return Err(Error::InvalidArgument(format!("t1 = {t1} is not an integrator node")));
    }
    let d = spec.dim();
    let n = seg.len() - 1;
    let mut w = DMatrix::zeros(d, d);
    // Phi(t2, t_k) built backward: P_n = I, P_k = P_{k+1} M_k
    let mut p = DMatrix::<f64>::identity(d, d);
    for k in (k1..=n).rev() {
        if k < n {
            p = &p * &seg.step_matrices()[k];
        }
        let b = spec.input_matrix(seg.state(k).as_slice())?;
        let pb = &p * b;
        let weight = if k == k1 || k == n { 0.5 * h } else { h };
        w += (&pb * pb.transpose()) * weight;
    }
    let s = singular_values(&w)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let retained: Vec<f64> = if smax > 0.0 {
        s.iter().copied().filter(|v| *v > GRAMIAN_RANK_TOL * smax).collect()
    } else {
        Vec::new()
    };
    Ok(GramianReport {
        rank: retained.len(),
        smallest_retained: retained.last().copied().unwrap_or(0.0),
        regular: retained.len() == d,
        singular_values: s,
    })
}

/// `max lambda_max((A + A^T) / 2)` of the Jacobian over sampled `(x, u)`.
///
/// Bounds the exponential growth rate of `|Phi(t)|` on trajectories that
/// stay among the samples (Wazewski inequality).
pub fn symmetric_growth_bound(spec: &SystemSpec, samples: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let d = spec.dim();
    let mut jac = DMatrix::zeros(d, d);
    let mut best = f64::NEG_INFINITY;
    for (x, u) in samples {
        spec.jacobian(x, u, &mut jac)?;
        let sym = (&jac + jac.transpose()) * 0.5;
        let top = sym.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        best = best.max(top);
    }
    Ok(best)
}

/// `log |Phi v|` for unit `v` along a segment, one value per node.
pub fn log_growth(seg: &FlowSegment, v: &DVector<f64>) -> Vec<f64> {
    let v = v.normalize();
    let mut w = v.clone();
    let mut log_scale = 0.0;
    let mut out = Vec::with_capacity(seg.len());
    out.push(0.0);
    for m in seg.step_matrices() {
        w = m * w;
        let n = w.norm();
        log_scale += n.ln();
        w /= n;
        out.push(log_scale);
    }
    out
}

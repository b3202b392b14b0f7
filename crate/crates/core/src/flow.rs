//! Fixed-step RK4 integration of the controlled ODE together with its
//! variational equation `Phi' = A(t) Phi`, `A = dF/dx` along the trajectory.
//!
//! The integrator step `h` divides the control step, so the control is
//! constant on every RK4 step. Each step also yields its one-step propagator
//! `M_k` with `Phi_{k+1} = M_k Phi_k`; long-horizon cocycles are evaluated
//! from these well-conditioned factors instead of the cumulative matrix.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::system::{steps_in, ControlSignal, SystemSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// RK4 steps per control step.
    pub substeps: usize,
    /// `|x|` above which integration aborts.
    pub blowup: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { substeps: 10, blowup: 1e6 }
    }
}

impl FlowOptions {
    pub fn with_substeps(substeps: usize) -> Self {
        FlowOptions { substeps, ..Default::default() }
    }

    pub fn step(&self, u: &ControlSignal) -> f64 {
        u.step() / self.substeps as f64
    }
}

/// Sampled trajectory `x_k = phi(t_k, x0, u)` and, optionally, fundamental
/// matrices `Phi_k = d phi(t_k - t_0, ., theta_{t_0} u)` at `x0`.
#[derive(Debug, Clone)]
pub struct FlowSegment {
    t0: f64,
    h: f64,
    states: Vec<DVector<f64>>,
    steps: Vec<DMatrix<f64>>,
    fundamentals: Vec<DMatrix<f64>>,
}

impl FlowSegment {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.t0
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &DVector<f64> {
        &self.states[k]
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("segment has at least the initial state")
    }

    pub fn has_variational(&self) -> bool {
        !self.fundamentals.is_empty()
    }

    /// One-step propagators `M_k`, `k = 0 .. len - 1`.
    pub fn step_matrices(&self) -> &[DMatrix<f64>] {
        &self.steps
    }

    pub fn fundamentals(&self) -> &[DMatrix<f64>] {
        &self.fundamentals
    }

    pub fn fundamental(&self, k: usize) -> &DMatrix<f64> {
        &self.fundamentals[k]
    }

    pub fn final_fundamental(&self) -> &DMatrix<f64> {
        self.fundamentals.last().expect("segment integrated with variational equation")
    }

    /// CSV with columns `t, x1..xd, phi_i_j` (row-major), the latter only when
    /// the variational equation was integrated.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.states.first().map_or(0, |x| x.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        if self.has_variational() {
            for i in 1..=d {
                header.extend((1..=d).map(|j| format!("phi_{i}_{j}")));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![fmt_num(self.time(k))];
            row.extend(self.states[k].iter().map(|v| fmt_num(*v)));
            if self.has_variational() {
                let phi = &self.fundamentals[k];
                for i in 0..d {
                    row.extend((0..d).map(|j| fmt_num(phi[(i, j)])));
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:.17e}")
}

/// Scratch buffers for one state-only RK4 step.
struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(d: usize) -> Self {
        Rk4 {
            k1: vec![0.0; d],
            k2: vec![0.0; d],
            k3: vec![0.0; d],
            k4: vec![0.0; d],
            tmp: vec![0.0; d],
        }
    }

    fn step(&mut self, spec: &SystemSpec, x: &mut [f64], u: &[f64], h: f64) -> Result<()> {
        let d = x.len();
        spec.vector_field(x, u, &mut self.k1)?;
        for i in 0..d {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        spec.vector_field(&self.tmp, u, &mut self.k2)?;
        for i in 0..d {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        spec.vector_field(&self.tmp, u, &mut self.k3)?;
        for i in 0..d {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        spec.vector_field(&self.tmp, u, &mut self.k4)?;
        for i in 0..d {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }

    /// State step plus the one-step propagator of the variational equation.
    fn step_variational(
        &mut self,
        spec: &SystemSpec,
        x: &mut [f64],
        u: &[f64],
        h: f64,
        jac: &mut DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let d = x.len();
        let id = DMatrix::<f64>::identity(d, d);
        let x0 = x.to_vec();

        spec.vector_field(&x0, u, &mut self.k1)?;
        spec.jacobian(&x0, u, jac)?;
        let p1 = &*jac * &id;

        for i in 0..d {
            self.tmp[i] = x0[i] + 0.5 * h * self.k1[i];
        }
        spec.vector_field(&self.tmp, u, &mut self.k2)?;
        spec.jacobian(&self.tmp, u, jac)?;
        let p2 = &*jac * (&id + &p1 * (0.5 * h));

        for i in 0..d {
            self.tmp[i] = x0[i] + 0.5 * h * self.k2[i];
        }
        spec.vector_field(&self.tmp, u, &mut self.k3)?;
        spec.jacobian(&self.tmp, u, jac)?;
        let p3 = &*jac * (&id + &p2 * (0.5 * h));

        for i in 0..d {
            self.tmp[i] = x0[i] + h * self.k3[i];
        }
        spec.vector_field(&self.tmp, u, &mut self.k4)?;
        spec.jacobian(&self.tmp, u, jac)?;
        let p4 = &*jac * (&id + &p3 * h);

        for i in 0..d {
            x[i] = x0[i] + h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(id + (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (h / 6.0))
    }
}

fn check_state(x: &[f64], t: f64, opts: &FlowOptions) -> Result<()> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite { t });
    }
    if norm > opts.blowup {
        return Err(Error::BlowUp { t, norm });
    }
    Ok(())
}

struct Grid {
    h: f64,
    first_control_step: i64,
    substeps: usize,
    n: usize,
}

fn grid(u: &ControlSignal, t0: f64, tau: f64, opts: &FlowOptions) -> Result<Grid> {
    if opts.substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be positive".into()));
    }
    let h = opts.step(u);
    let s0 = (t0 / u.step()).round();
    if (s0 * u.step() - t0).abs() > 1e-9 * u.step().max(t0.abs()) {
        return Err(Error::InvalidArgument(format!(
            "start time {t0} is not on the control grid"
        )));
    }
    let n = steps_in(tau, h)?;
    if !u.covers(t0, t0 + tau) {
        return Err(Error::InvalidArgument(format!(
            "control undefined on [{t0}, {}]",
            t0 + tau
        )));
    }
    Ok(Grid { h, first_control_step: s0 as i64, substeps: opts.substeps, n })
}

impl Grid {
    fn control<'u>(&self, u: &'u ControlSignal, k: usize) -> &'u [f64] {
        u.value_at_step(self.first_control_step + (k / self.substeps) as i64)
            .expect("control domain checked")
    }
}

/// `phi(t, x0, u)` on `[0, tau]`, with fundamental matrices when requested.
pub fn integrate(
    spec: &SystemSpec,
    x0: &[f64],
    u: &ControlSignal,
    tau: f64,
    with_variational: bool,
) -> Result<FlowSegment> {
    integrate_from(spec, 0.0, x0, u, tau, with_variational, &FlowOptions::default())
}

/// Integrates on `[t0, t0 + tau]` starting from `x(t0) = x0`.
pub fn integrate_from(
    spec: &SystemSpec,
    t0: f64,
    x0: &[f64],
    u: &ControlSignal,
    tau: f64,
    with_variational: bool,
    opts: &FlowOptions,
) -> Result<FlowSegment> {
    check_dims(spec, x0, u)?;
    let g = grid(u, t0, tau, opts)?;
    let d = spec.dim();
    let mut rk = Rk4::new(d);
    let mut jac = DMatrix::zeros(d, d);
    let mut x = x0.to_vec();
    check_state(&x, t0, opts)?;
    let mut states = Vec::with_capacity(g.n + 1);
    states.push(DVector::from_column_slice(&x));
    let mut steps = Vec::new();
    let mut fundamentals = Vec::new();
    if with_variational {
        steps.reserve(g.n);
        fundamentals.reserve(g.n + 1);
        fundamentals.push(DMatrix::identity(d, d));
    }
    for k in 0..g.n {
        let uk = g.control(u, k);
        if with_variational {
            let m = rk.step_variational(spec, &mut x, uk, g.h, &mut jac)?;
            let phi = &m * &fundamentals[k];
            steps.push(m);
            fundamentals.push(phi);
        } else {
            rk.step(spec, &mut x, uk, g.h)?;
        }
        check_state(&x, t0 + (k + 1) as f64 * g.h, opts)?;
        states.push(DVector::from_column_slice(&x));
    }
    Ok(FlowSegment { t0, h: g.h, states, steps, fundamentals })
}

/// Visits the states of `phi(t, x0, u)` at the integrator nodes on
/// `[t0, t0 + tau]`; stops early when `visit` returns `false`.
/// Returns the number of nodes visited.
pub fn visit_states<F>(
    spec: &SystemSpec,
    t0: f64,
    x0: &[f64],
    u: &ControlSignal,
    tau: f64,
    opts: &FlowOptions,
    mut visit: F,
) -> Result<usize>
where
    F: FnMut(usize, &[f64]) -> bool,
{
    check_dims(spec, x0, u)?;
    let g = grid(u, t0, tau, opts)?;
    let mut rk = Rk4::new(spec.dim());
    let mut x = x0.to_vec();
    check_state(&x, t0, opts)?;
    if !visit(0, &x) {
        return Ok(1);
    }
    for k in 0..g.n {
        rk.step(spec, &mut x, g.control(u, k), g.h)?;
        check_state(&x, t0 + (k + 1) as f64 * g.h, opts)?;
        if !visit(k + 1, &x) {
            return Ok(k + 2);
        }
    }
    Ok(g.n + 1)
}

/// States at `t_end, t_end - h, ..., t_end - tau` by integrating backward in
/// time from `x(t_end) = x_end`. Entry `k` is the state at `t_end - k h`.
pub fn integrate_backward(
    spec: &SystemSpec,
    t_end: f64,
    x_end: &[f64],
    u: &ControlSignal,
    tau: f64,
    opts: &FlowOptions,
) -> Result<Vec<DVector<f64>>> {
    check_dims(spec, x_end, u)?;
    let g = grid(u, t_end - tau, tau, opts)?;
    let last = g.n;
    let mut rk = Rk4::new(spec.dim());
    let mut x = x_end.to_vec();
    check_state(&x, t_end, opts)?;
    let mut out = Vec::with_capacity(g.n + 1);
    out.push(DVector::from_column_slice(&x));
    for k in 0..g.n {
        // step from node (last - k) back to node (last - k - 1)
        let uk = g.control(u, last - k - 1);
        rk.step(spec, &mut x, uk, -g.h)?;
        check_state(&x, t_end - (k + 1) as f64 * g.h, opts)?;
        out.push(DVector::from_column_slice(&x));
    }
    Ok(out)
}

/// One-step propagator from `x` over a single RK4 step of size `h` under `u`.
pub(crate) fn step_propagator(
    spec: &SystemSpec,
    x: &[f64],
    u: &[f64],
    h: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = spec.dim();
    let mut rk = Rk4::new(d);
    let mut jac = DMatrix::zeros(d, d);
    let mut y = x.to_vec();
    let m = rk.step_variational(spec, &mut y, u, h, &mut jac)?;
    Ok((DVector::from_vec(y), m))
}

fn check_dims(spec: &SystemSpec, x0: &[f64], u: &ControlSignal) -> Result<()> {
    if x0.len() != spec.dim() {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} coordinates, system has {}",
            x0.len(),
            spec.dim()
        )));
    }
    if u.values().first().is_some_and(|v| v.len() != spec.inputs()) {
        return Err(Error::InvalidArgument(format!(
            "control values have dimension {}, system has {} inputs",
            u.values()[0].len(),
            spec.inputs()
        )));
    }
    Ok(())
}

/// `max_k |phi(t_k, x, u) - phi(t_k, y, u)|` over the integrator nodes in `[0, tau]`.
pub fn bowen_distance(
    spec: &SystemSpec,
    u: &ControlSignal,
    x: &[f64],
    y: &[f64],
    tau: f64,
    opts: &FlowOptions,
) -> Result<f64> {
    let a = integrate_from(spec, 0.0, x, u, tau, false, opts)?;
    let b = integrate_from(spec, 0.0, y, u, tau, false, opts)?;
    Ok(a.states
        .iter()
        .zip(&b.states)
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max))
}

/// Monodromy matrix `Phi(T_p)` of a numerically `T_p`-periodic trajectory.
pub fn monodromy(
    spec: &SystemSpec,
    x0: &[f64],
    u: &ControlSignal,
    closure_tol: f64,
    opts: &FlowOptions,
) -> Result<DMatrix<f64>> {
    let period = u
        .period()
        .ok_or_else(|| Error::InvalidArgument("monodromy needs a periodic control".into()))?;
    let seg = integrate_from(spec, 0.0, x0, u, period, true, opts)?;
    let defect = (seg.final_state() - DVector::from_column_slice(x0)).norm();
    if defect > closure_tol {
        return Err(Error::ClosureViolation { defect });
    }
    Ok(seg.final_fundamental().clone())
}

/// A trajectory closing up after one period of its periodic control.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub x0: DVector<f64>,
    pub period: f64,
    pub closure: f64,
    /// One period, with variational data.
    pub segment: FlowSegment,
}

impl PeriodicOrbit {
    pub fn monodromy(&self) -> &DMatrix<f64> {
        self.segment.final_fundamental()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { max_iter: 40, tol: 1e-10 }
    }
}

/// Newton shooting for `phi(T_p, x, u) = x` starting at `guess`.
pub fn find_periodic_orbit(
    spec: &SystemSpec,
    u: &ControlSignal,
    guess: &[f64],
    opts: &FlowOptions,
    newton: &NewtonOptions,
) -> Result<PeriodicOrbit> {
    let period = u
        .period()
        .ok_or_else(|| Error::InvalidArgument("periodic orbit needs a periodic control".into()))?;
    let d = spec.dim();
    let mut x = DVector::from_column_slice(guess);
    let mut residual = f64::INFINITY;
    for _ in 0..newton.max_iter {
        let seg = integrate_from(spec, 0.0, x.as_slice(), u, period, true, opts)?;
        let r = seg.final_state() - &x;
        residual = r.norm();
        if residual <= newton.tol * (1.0 + x.norm()) {
            return Ok(PeriodicOrbit { x0: x, period, closure: residual, segment: seg });
        }
        let jac = seg.final_fundamental() - DMatrix::<f64>::identity(d, d);
        let dx = jac
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| Error::Linalg("singular shooting Jacobian (multiplier 1)".into()))?;
        // damp large steps
        let scale = (1.0 / dx.norm()).min(1.0);
        x += dx * scale;
    }
    Err(Error::NonConvergence { what: "periodic orbit shooting".into(), residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::BoxSet;

    fn scalar_unstable() -> SystemSpec {
        SystemSpec::from_strings(1, &[&["x1"], &["1"]], &[-1.0], &[1.0]).unwrap()
    }

    fn zero_u(spec: &SystemSpec, step: f64) -> ControlSignal {
        ControlSignal::constant(vec![0.0; spec.inputs()], step, spec.control_box()).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let s = SystemSpec::from_strings(1, &[&["-x1"], &["x1"]], &[-1.0], &[1.0]).unwrap();
        let seg = integrate(&s, &[1.0], &zero_u(&s, 0.1), 1.0, true).unwrap();
        assert!((seg.final_state()[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert!((seg.final_fundamental()[(0, 0)] - (-1.0f64).exp()).abs() < 1e-8);

        let s = scalar_unstable();
        let u = ControlSignal::constant(vec![1.0], 0.1, s.control_box()).unwrap();
        let seg = integrate(&s, &[0.0], &u, 1.0, false).unwrap();
        assert!((seg.final_state()[0] - (1.0f64.exp() - 1.0)).abs() < 1e-8);

        let s = SystemSpec::from_strings(2, &[&["x1", "-x2"]], &[], &[]).unwrap();
        let seg = integrate(&s, &[0.3, 0.2], &ControlSignal::autonomous(0.1), 1.0, true).unwrap();
        let phi = seg.final_fundamental();
        assert!((phi[(0, 0)] - 1.0f64.exp()).abs() < 1e-8);
        assert!((phi[(1, 1)] - (-1.0f64).exp()).abs() < 1e-8);
        assert!(phi[(0, 1)].abs() < 1e-15 && phi[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn bowen_distance_examples() {
        let s = SystemSpec::from_strings(1, &[&["x1"]], &[], &[]).unwrap();
        let u = ControlSignal::autonomous(0.1);
        let o = FlowOptions::default();
        assert_eq!(bowen_distance(&s, &u, &[0.2], &[0.2], 2.0, &o).unwrap(), 0.0);
        let d = bowen_distance(&s, &u, &[0.0], &[1e-3], 2.0, &o).unwrap();
        assert!((d - 1e-3 * 2.0f64.exp()).abs() < 1e-10);
        let a = bowen_distance(&s, &u, &[0.1], &[-0.3], 1.5, &o).unwrap();
        let b = bowen_distance(&s, &u, &[-0.3], &[0.1], 1.5, &o).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monodromy_examples() {
        let o = FlowOptions::default();
        let s = SystemSpec::from_strings(2, &[&["x2", "-2*x1 - 0.5*x2"]], &[], &[]).unwrap();
        let m = monodromy(&s, &[0.0, 0.0], &ControlSignal::autonomous(1.0), 1e-12, &o).unwrap();
        // e^A via a fine-step reference integration of the same flow
        let fine = integrate_from(
            &s, 0.0, &[0.0, 0.0], &ControlSignal::autonomous(1.0), 1.0, true,
            &FlowOptions::with_substeps(400),
        )
        .unwrap();
        assert!((m - fine.final_fundamental()).norm() < 1e-5);

        let s = scalar_unstable();
        let u = ControlSignal::constant(vec![0.0], 0.5, s.control_box()).unwrap().shift(0.0);
        let u = crate::system::concat(&u, 2.0, &u, 0.0, true).unwrap();
        let m = monodromy(&s, &[0.0], &u, 1e-12, &o).unwrap();
        assert!((m[(0, 0)] - 2.0f64.exp()).abs() < 1e-5);

        assert!(matches!(
            monodromy(&s, &[0.5], &u, 1e-6, &o),
            Err(Error::ClosureViolation { .. })
        ));
    }

    #[test]
    fn cocycle_identity_of_fundamental_matrices() {
        let s = SystemSpec::from_strings(
            2,
            &[&["x2", "-x1 + 0.3*x2"], &["0", "1"]],
            &[-1.0],
            &[1.0],
        )
        .unwrap();
        let bx: &BoxSet = s.control_box();
        let u = ControlSignal::finite(
            0.1,
            (0..30).map(|k| vec![((k as f64) * 0.7).sin()]).collect(),
            bx,
        )
        .unwrap();
        let o = FlowOptions::default();
        let full = integrate_from(&s, 0.0, &[0.4, -0.2], &u, 3.0, true, &o).unwrap();
        let k = 10 * 12;
        let second = integrate_from(&s, 1.2, full.state(k).as_slice(), &u, 1.8, true, &o).unwrap();
        let composed = second.final_fundamental() * full.fundamental(k);
        assert!((composed - full.final_fundamental()).norm() < 1e-6);
        assert!((second.final_state() - full.final_state()).norm() < 1e-12);
    }

    #[test]
    fn fourth_order_convergence() {
        let s = SystemSpec::from_strings(2, &[&["x2", "-sin(x1)"]], &[], &[]).unwrap();
        let u = ControlSignal::autonomous(0.4);
        let at = |n: usize| {
            integrate_from(&s, 0.0, &[1.0, 0.0], &u, 4.0, false, &FlowOptions::with_substeps(n))
                .unwrap()
                .final_state()
                .clone()
        };
        let (a, b, c) = (at(2), at(4), at(8));
        let order = ((&a - &b).norm() / (&b - &c).norm()).log2();
        assert!(order >= 3.5, "empirical order {order}");
    }

    #[test]
    fn blow_up_is_reported() {
        let s = SystemSpec::from_strings(1, &[&["x1^2"]], &[], &[]).unwrap();
        let r = integrate(&s, &[1.0], &ControlSignal::autonomous(0.1), 2.0, false);
        assert!(matches!(r, Err(Error::BlowUp { .. }) | Err(Error::NonFinite { .. })));
        let s = SystemSpec::from_strings(1, &[&["1/x1"]], &[], &[]).unwrap();
        let r = integrate(&s, &[0.0], &ControlSignal::autonomous(0.1), 1.0, false);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn backward_integration_inverts_forward() {
        let s = SystemSpec::from_strings(2, &[&["x2", "-sin(x1)"]], &[], &[]).unwrap();
        let u = ControlSignal::autonomous(0.1);
        let o = FlowOptions::default();
        let fwd = integrate_from(&s, -1.0, &[0.5, 0.1], &u, 2.0, false, &o).unwrap();
        let back = integrate_backward(&s, 1.0, fwd.final_state().as_slice(), &u, 2.0, &o).unwrap();
        assert_eq!(back.len(), fwd.len());
        assert!((back.last().unwrap() - fwd.state(0)).norm() < 1e-9);
    }

    #[test]
    fn shooting_finds_periodic_orbit() {
        let s = SystemSpec::from_strings(
            2,
            &[&["x1 + x2^2", "-x2"], &["0", "1"]],
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
        let orbit = find_periodic_orbit(&s, &u, &[0.0, 0.0], &FlowOptions::default(), &NewtonOptions::default())
            .unwrap();
        assert!(orbit.closure < 1e-9);
        let m = monodromy(&s, orbit.x0.as_slice(), &u, 1e-8, &FlowOptions::default()).unwrap();
        assert!((m[(0, 0)] - 2.0f64.exp()).abs() < 1e-6);
        assert!((m[(1, 1)] - (-2.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let s = scalar_unstable();
        let seg = integrate(&s, &[0.1], &zero_u(&s, 0.5), 1.0, true).unwrap();
        let mut buf = Vec::new();
        seg.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,phi_1_1");
        assert_eq!(lines.len(), seg.len() + 1);
    }
}

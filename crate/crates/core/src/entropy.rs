//! Three routes to the invariance entropy `h_inv(K, Q)`:
//!
//! * spanning counts `r_inv(tau, K, Q)` over a finite candidate family,
//!   reduced by greedy set cover, and the slope of `log r` against `tau`;
//! * the upper bound `inf (1/T) alpha_T(u, x)` over periodic lifted points;
//! * the lower bound `inf (1/T) log J+_T(u, x)` (unstable determinant) over
//!   the same kind of candidates.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::{alpha_from_steps, FrameTracker};
use crate::error::{Error, Result};
use crate::flow::{
    find_periodic_orbit, fmt_num, integrate_from, visit_states, FlowOptions, FlowSegment,
    NewtonOptions,
};
use crate::splitting::{verify_hyperbolicity, SplittingProvider};
use crate::system::{quantize_controls, steps_in, BoxSet, ControlSignal, SystemSpec};

/// Produces the candidate controls a spanning set is selected from.
pub trait CandidateGenerator: Sync {
    fn describe(&self) -> String;

    fn candidates(
        &self,
        spec: &SystemSpec,
        points: &[Vec<f64>],
        q: &BoxSet,
        tau: f64,
        flow: &FlowOptions,
    ) -> Result<Vec<ControlSignal>>;
}

fn alphabet(spec: &SystemSpec, levels: usize) -> Result<Vec<Vec<f64>>> {
    if spec.inputs() == 0 {
        Ok(vec![Vec::new()])
    } else {
        quantize_controls(spec, levels)
    }
}

fn signal(spec: &SystemSpec, step: f64, values: Vec<Vec<f64>>) -> Result<ControlSignal> {
    if spec.inputs() == 0 {
        Ok(ControlSignal::autonomous(step))
    } else {
        ControlSignal::finite(step, values, spec.control_box())
    }
}

/// Every piecewise-constant sequence over the quantized alphabet.
#[derive(Debug, Clone)]
pub struct ExhaustiveAlphabet {
    pub step: f64,
    pub levels: usize,
    /// Refuse to enumerate more than this many sequences.
    pub max_candidates: usize,
}

impl ExhaustiveAlphabet {
    pub fn count(&self, spec: &SystemSpec, tau: f64) -> Result<usize> {
        let letters = alphabet(spec, self.levels)?.len();
        let n = steps_in(tau, self.step)?;
        Ok(letters.checked_pow(n as u32).unwrap_or(usize::MAX))
    }
}

impl CandidateGenerator for ExhaustiveAlphabet {
    fn describe(&self) -> String {
        format!("exhaustive(step={}, levels={})", self.step, self.levels)
    }

    fn candidates(
        &self,
        spec: &SystemSpec,
        _points: &[Vec<f64>],
        _q: &BoxSet,
        tau: f64,
        _flow: &FlowOptions,
    ) -> Result<Vec<ControlSignal>> {
        let letters = alphabet(spec, self.levels)?;
        let n = steps_in(tau, self.step)?;
        let total = self.count(spec, tau)?;
        if total > self.max_candidates {
            return Err(Error::InvalidArgument(format!(
                "{total} exhaustive candidates exceed the limit {}",
                self.max_candidates
            )));
        }
        let l = letters.len();
        (0..total)
            .map(|mut code| {
                let mut values = vec![Vec::new(); n];
                // most significant digit first
                for slot in values.iter_mut().rev() {
                    *slot = letters[code % l].clone();
                    code /= l;
                }
                signal(spec, self.step, values)
            })
            .collect()
    }
}

/// One candidate per point: on every control interval pick the letter whose
/// trajectory piece keeps the largest margin to the boundary of `Q`.
#[derive(Debug, Clone)]
pub struct TrackingGenerator {
    pub step: f64,
    pub levels: usize,
}

impl CandidateGenerator for TrackingGenerator {
    fn describe(&self) -> String {
        format!("tracking(step={}, levels={})", self.step, self.levels)
    }

    fn candidates(
        &self,
        spec: &SystemSpec,
        points: &[Vec<f64>],
        q: &BoxSet,
        tau: f64,
        flow: &FlowOptions,
    ) -> Result<Vec<ControlSignal>> {
        let letters = alphabet(spec, self.levels)?;
        let n = steps_in(tau, self.step)?;
        let pieces: Vec<ControlSignal> = letters
            .iter()
            .map(|w| signal(spec, self.step, vec![w.clone()]))
            .collect::<Result<_>>()?;
        points
            .par_iter()
            .map(|p| {
                let mut x = p.clone();
                let mut values = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut best: Option<(f64, usize, Vec<f64>)> = None;
                    for (i, u) in pieces.iter().enumerate() {
                        let mut margin = f64::INFINITY;
                        let mut last = x.clone();
                        let r = visit_states(spec, 0.0, &x, u, self.step, flow, |_, y| {
                            margin = margin.min(q.margin(y));
                            last.copy_from_slice(y);
                            true
                        });
                        if r.is_err() {
                            continue;
                        }
                        if best.as_ref().is_none_or(|b| margin > b.0) {
                            best = Some((margin, i, last));
                        }
                    }
                    let Some((_, i, next)) = best else {
                        break;
                    };
                    values.push(letters[i].clone());
                    x = next;
                }
                while values.len() < n {
                    values.push(letters[0].clone());
                }
                signal(spec, self.step, values)
            })
            .collect()
    }
}

/// Union of several generators, duplicates removed (first occurrence kept).
pub struct Union(pub Vec<Box<dyn CandidateGenerator>>);

impl CandidateGenerator for Union {
    fn describe(&self) -> String {
        self.0.iter().map(|g| g.describe()).collect::<Vec<_>>().join(" + ")
    }

    fn candidates(
        &self,
        spec: &SystemSpec,
        points: &[Vec<f64>],
        q: &BoxSet,
        tau: f64,
        flow: &FlowOptions,
    ) -> Result<Vec<ControlSignal>> {
        let mut all = Vec::new();
        for g in &self.0 {
            all.extend(g.candidates(spec, points, q, tau, flow)?);
        }
        Ok(all)
    }
}

/// Tracking candidates, plus the exhaustive family when it has at most
/// `exhaustive_limit` members.
pub fn default_generator(
    spec: &SystemSpec,
    step: f64,
    levels: usize,
    tau: f64,
    exhaustive_limit: usize,
) -> Result<Box<dyn CandidateGenerator>> {
    let tracking = TrackingGenerator { step, levels };
    let exhaustive = ExhaustiveAlphabet { step, levels, max_candidates: exhaustive_limit };
    if exhaustive.count(spec, tau)? <= exhaustive_limit {
        Ok(Box::new(Union(vec![Box::new(tracking), Box::new(exhaustive)])))
    } else {
        Ok(Box::new(tracking))
    }
}

fn dedupe(candidates: Vec<ControlSignal>) -> Vec<ControlSignal> {
    let mut seen = BTreeSet::new();
    candidates
        .into_iter()
        .filter(|c| {
            let key: Vec<u64> = c.values().iter().flatten().map(|v| v.to_bits()).collect();
            seen.insert(key)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanningResult {
    pub tau: f64,
    pub points: Vec<Vec<f64>>,
    pub q: BoxSet,
    pub generator: String,
    /// Distinct candidates after deduplication.
    pub candidates: usize,
    pub selected: Vec<ControlSignal>,
    pub count: usize,
    /// `witness[p]` indexes `selected`.
    pub witness: Vec<usize>,
    /// Points whose witness failed the re-integration at half the step.
    pub reverify_failures: Vec<usize>,
}

fn stays_in(
    spec: &SystemSpec,
    p: &[f64],
    u: &ControlSignal,
    q: &BoxSet,
    tau: f64,
    flow: &FlowOptions,
) -> bool {
    let mut inside = true;
    let r = visit_states(spec, 0.0, p, u, tau, flow, |_, y| {
        inside = q.contains(y);
        inside
    });
    r.is_ok() && inside
}

struct Bitset(Vec<u64>);

impl Bitset {
    fn new(n: usize) -> Self {
        Bitset(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn count_and(&self, other: &Bitset) -> u32 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a & b).count_ones()).sum()
    }
    fn clear_from(&mut self, other: &Bitset) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a &= !b);
    }
    fn any(&self) -> bool {
        self.0.iter().any(|w| *w != 0)
    }
}

/// Greedy set cover: repeatedly the row covering most uncovered points,
/// ties to the lowest index. Returns selected row indices.
fn greedy_cover(rows: &[Bitset], n: usize) -> Vec<usize> {
    let mut uncovered = Bitset::new(n);
    (0..n).for_each(|i| uncovered.set(i));
    let mut chosen = Vec::new();
    while uncovered.any() {
        let (best, gain) = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.count_and(&uncovered)))
            .fold((0, 0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if gain == 0 {
            break;
        }
        chosen.push(best);
        uncovered.clear_from(&rows[best]);
    }
    chosen
}

#[derive(Debug, Clone, Copy)]
pub struct SpanningOptions {
    pub flow: FlowOptions,
    /// Re-integrate witnesses with twice the substeps.
    pub reverify: bool,
}

impl Default for SpanningOptions {
    fn default() -> Self {
        SpanningOptions { flow: FlowOptions::default(), reverify: true }
    }
}

/// Greedy `(tau, K, Q)`-spanning set from the generator's candidates.
pub fn spanning_count(
    spec: &SystemSpec,
    points: &[Vec<f64>],
    q: &BoxSet,
    tau: f64,
    generator: &dyn CandidateGenerator,
    opts: &SpanningOptions,
) -> Result<SpanningResult> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("K grid is empty".into()));
    }
    let candidates = dedupe(generator.candidates(spec, points, q, tau, &opts.flow)?);
    let n = points.len();
    let rows: Vec<Bitset> = candidates
        .par_iter()
        .map(|u| {
            let mut row = Bitset::new(n);
            for (i, p) in points.iter().enumerate() {
                if stays_in(spec, p, u, q, tau, &opts.flow) {
                    row.set(i);
                }
            }
            row
        })
        .collect();
    let uncovered: Vec<usize> = (0..n).filter(|&i| !rows.iter().any(|r| r.get(i))).collect();
    if !uncovered.is_empty() {
        return Err(Error::Uncoverable { points: uncovered });
    }
    let chosen = greedy_cover(&rows, n);
    let fine = FlowOptions { substeps: opts.flow.substeps * 2, ..opts.flow };
    let mut witness = Vec::with_capacity(n);
    let mut reverify_failures = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let covering: Vec<usize> = (0..chosen.len()).filter(|&s| rows[chosen[s]].get(i)).collect();
        let pick = if opts.reverify {
            covering
                .iter()
                .copied()
                .find(|&s| stays_in(spec, p, &candidates[chosen[s]], q, tau, &fine))
        } else {
            covering.first().copied()
        };
        match pick {
            Some(s) => witness.push(s),
            None => {
                reverify_failures.push(i);
                witness.push(covering[0]);
            }
        }
    }
    let selected: Vec<ControlSignal> = chosen.iter().map(|&c| candidates[c].clone()).collect();
    Ok(SpanningResult {
        tau,
        points: points.to_vec(),
        q: q.clone(),
        generator: generator.describe(),
        candidates: candidates.len(),
        count: selected.len(),
        selected,
        witness,
        reverify_failures,
    })
}

/// Least-squares slope of `log r` against `tau` over the larger half of the
/// `tau` range (at least the two largest values).
pub fn entropy_slope_from(table: &[(f64, f64)]) -> Result<f64> {
    let mut t: Vec<(f64, f64)> = table.to_vec();
    t.sort_by(|a, b| a.0.total_cmp(&b.0));
    t.dedup_by(|a, b| a.0 == b.0);
    if t.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "entropy slope needs at least 3 distinct horizons, got {}",
            t.len()
        )));
    }
    if t.iter().any(|p| !(p.1 >= 1.0)) {
        return Err(Error::InvalidArgument("spanning counts must be at least 1".into()));
    }
    let mid = 0.5 * (t[0].0 + t[t.len() - 1].0);
    let mut upper: Vec<(f64, f64)> = t.iter().copied().filter(|p| p.0 >= mid).collect();
    if upper.len() < 2 {
        upper = t[t.len() - 2..].to_vec();
    }
    let n = upper.len() as f64;
    let mx = upper.iter().map(|p| p.0).sum::<f64>() / n;
    let my = upper.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = upper.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = upper.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    Ok(sxy / sxx)
}

pub fn entropy_slope(results: &[SpanningResult]) -> Result<f64> {
    let table: Vec<(f64, f64)> = results.iter().map(|r| (r.tau, r.count as f64)).collect();
    entropy_slope_from(&table)
}

/// Spanning table CSV: `tau, r, log_r_over_tau`.
pub fn write_spanning_csv<W: Write>(results: &[SpanningResult], mut w: W) -> Result<()> {
    writeln!(w, "tau,r,log_r_over_tau")?;
    for r in results {
        let rate = if r.tau > 0.0 { fmt_num((r.count as f64).ln() / r.tau) } else { String::new() };
        writeln!(w, "{},{},{}", fmt_num(r.tau), r.count, rate)?;
    }
    Ok(())
}

/// A periodic control with a numerically periodic trajectory in the region.
#[derive(Debug, Clone)]
pub struct PeriodicCandidate {
    pub control: ControlSignal,
    pub x0: Vec<f64>,
    /// One period, with variational data.
    pub segment: FlowSegment,
}

impl PeriodicCandidate {
    pub fn period(&self) -> f64 {
        self.control.period().expect("periodic candidate")
    }

    /// Whole periods closest to `horizon` (at least one).
    pub fn periods_for(&self, horizon: f64) -> usize {
        ((horizon / self.period()).round() as usize).max(1)
    }
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Control step.
    pub step: f64,
    /// Period of the candidate controls, in steps.
    pub period_steps: usize,
    /// Quantization levels for the constant seeds.
    pub levels: usize,
    /// Random periodic controls in addition to the constant ones.
    pub restarts: usize,
    /// Budget of coordinate-descent evaluations.
    pub descent_evals: usize,
    /// Rate horizon `T`; the rate at `2T` is reported alongside.
    pub horizon: f64,
    /// Candidates live in the box shrunk by `eta` about its center.
    pub eta: f64,
    /// Random initial guesses for periodic-orbit shooting.
    pub random_guesses: usize,
    pub seed: u64,
    /// Minimum rate for the hyperbolicity check of lower-bound candidates.
    pub min_rate: f64,
    /// Probe horizon for the hyperbolicity check.
    pub probe_horizon: f64,
    pub flow: FlowOptions,
    pub newton: NewtonOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            step: 0.25,
            period_steps: 4,
            levels: 3,
            restarts: 6,
            descent_evals: 24,
            horizon: 50.0,
            eta: 0.95,
            random_guesses: 4,
            seed: 0,
            min_rate: 0.05,
            probe_horizon: 2.0,
            flow: FlowOptions::default(),
            newton: NewtonOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Rate at the horizon `T`.
    pub value: f64,
    /// Rate at `2T` for the same witness.
    pub value_2t: f64,
    pub horizon: f64,
    pub control: ControlSignal,
    pub x0: Vec<f64>,
    pub evaluated: usize,
    /// Candidates without a periodic orbit in the region or whose rate failed.
    pub rejected: usize,
    /// Best value after each improvement.
    pub trace: Vec<f64>,
}

/// Newton shooting for a periodic orbit of `u` that stays in `d` over a
/// period, trying `guesses` in order.
pub fn periodic_candidate(
    spec: &SystemSpec,
    u: &ControlSignal,
    d: &BoxSet,
    guesses: &[Vec<f64>],
    opts: &SearchOptions,
) -> Option<PeriodicCandidate> {
    for g in guesses {
        let Ok(orbit) = find_periodic_orbit(spec, u, g, &opts.flow, &opts.newton) else {
            continue;
        };
        if orbit.segment.states().iter().all(|x| d.contains_tol(x.as_slice(), 1e-9)) {
            return Some(PeriodicCandidate {
                control: u.clone(),
                x0: orbit.x0.as_slice().to_vec(),
                segment: orbit.segment,
            });
        }
    }
    None
}

fn orbit_guesses(d: &BoxSet, opts: &SearchOptions) -> Vec<Vec<f64>> {
    let mut g = vec![d.center()];
    g.extend(d.lattice(3));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x0b17);
    for _ in 0..opts.random_guesses {
        g.push(d.lo().iter().zip(d.hi()).map(|(a, b)| rng.random_range(*a..=*b)).collect());
    }
    g
}

fn initial_controls(spec: &SystemSpec, opts: &SearchOptions) -> Result<Vec<ControlSignal>> {
    let bx = spec.control_box();
    if spec.inputs() == 0 {
        return Ok(vec![ControlSignal::autonomous(opts.step)]);
    }
    let inner = bx.shrink(opts.eta)?;
    let mut out: Vec<ControlSignal> = quantize_controls(spec, opts.levels)?
        .into_iter()
        .map(|w| {
            ControlSignal::periodic(opts.step, vec![w; opts.period_steps], bx)
                .and_then(|u| u.to_interior(bx, opts.eta))
        })
        .collect::<Result<_>>()?;
    for r in 0..opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
        let values = (0..opts.period_steps)
            .map(|_| {
                inner.lo().iter().zip(inner.hi()).map(|(a, b)| rng.random_range(*a..=*b)).collect()
            })
            .collect();
        out.push(ControlSignal::periodic(opts.step, values, bx)?);
    }
    Ok(out)
}

type RateFn<'a> = dyn Fn(&PeriodicCandidate, f64) -> Result<f64> + Sync + 'a;

/// Random/constant periodic seeds, then coordinate descent on the control
/// values of the best one, minimizing `rate(candidate, T)`.
fn search(
    spec: &SystemSpec,
    d: &BoxSet,
    opts: &SearchOptions,
    rate: &RateFn<'_>,
) -> Result<(SearchOutcome, PeriodicCandidate)> {
    let guesses = orbit_guesses(d, opts);
    let seeds = initial_controls(spec, opts)?;
    let evaluated: Vec<Option<(f64, PeriodicCandidate)>> = seeds
        .par_iter()
        .map(|u| {
            let c = periodic_candidate(spec, u, d, &guesses, opts)?;
            let r = rate(&c, opts.horizon).ok()?;
            Some((r, c))
        })
        .collect();
    let mut rejected = evaluated.iter().filter(|e| e.is_none()).count();
    let mut count = evaluated.len();
    let (mut best_rate, mut best) = evaluated
        .into_iter()
        .flatten()
        .fold(None::<(f64, PeriodicCandidate)>, |acc, x| match acc {
            Some(a) if a.0 <= x.0 => Some(a),
            _ => Some(x),
        })
        .ok_or_else(|| {
            Error::Admissibility("no periodic candidate keeps its trajectory in the region".into())
        })?;
    let mut trace = vec![best_rate];

    if spec.inputs() > 0 {
        let inner = spec.control_box().shrink(opts.eta)?;
        let m = spec.inputs();
        let mut size: Vec<f64> = (0..m).map(|i| 0.25 * (inner.hi()[i] - inner.lo()[i])).collect();
        let mut budget = opts.descent_evals;
        while budget > 0 && size.iter().any(|s| *s > 1e-3) {
            let mut improved = false;
            'sweep: for j in 0..opts.period_steps {
                for i in 0..m {
                    for sign in [1.0, -1.0] {
                        if budget == 0 {
                            break 'sweep;
                        }
                        let mut values = best.control.values().to_vec();
                        let v = (values[j][i] + sign * size[i]).clamp(inner.lo()[i], inner.hi()[i]);
                        if v == values[j][i] {
                            continue;
                        }
                        values[j][i] = v;
                        budget -= 1;
                        count += 1;
                        let Ok(u) = ControlSignal::periodic(opts.step, values, spec.control_box())
                        else {
                            continue;
                        };
                        let mut g = vec![best.x0.clone()];
                        g.extend(guesses.iter().cloned());
                        let Some(c) = periodic_candidate(spec, &u, d, &g, opts) else {
                            rejected += 1;
                            continue;
                        };
                        match rate(&c, opts.horizon) {
                            Ok(r) if r < best_rate - 1e-12 => {
                                best_rate = r;
                                best = c;
                                trace.push(r);
                                improved = true;
                            }
                            Ok(_) => {}
                            Err(_) => rejected += 1,
                        }
                    }
                }
            }
            if !improved {
                size.iter_mut().for_each(|s| *s *= 0.5);
            }
        }
    }
    let value_2t = rate(&best, 2.0 * opts.horizon)?;
    Ok((
        SearchOutcome {
            value: best_rate,
            value_2t,
            horizon: opts.horizon,
            control: best.control.clone(),
            x0: best.x0.clone(),
            evaluated: count,
            rejected,
            trace,
        },
        best,
    ))
}

/// `(1/T) alpha_T` on a periodic candidate, `T` rounded to whole periods.
pub fn alpha_rate(c: &PeriodicCandidate, horizon: f64) -> Result<f64> {
    let n = c.periods_for(horizon);
    let steps = c.segment.step_matrices();
    let d = c.x0.len();
    let a = alpha_from_steps(d, steps.iter().cycle().take(n * steps.len()))?;
    Ok(a / (n as f64 * c.period()))
}

/// Upper-route rate of a given periodic control: finds its periodic orbit in
/// `d` first.
pub fn upper_rate(
    spec: &SystemSpec,
    u: &ControlSignal,
    d: &BoxSet,
    guess: &[f64],
    opts: &SearchOptions,
) -> Result<f64> {
    let mut g = vec![guess.to_vec()];
    g.extend(orbit_guesses(d, opts));
    let c = periodic_candidate(spec, u, d, &g, opts).ok_or_else(|| {
        Error::Admissibility("control has no periodic orbit in the region".into())
    })?;
    alpha_rate(&c, opts.horizon)
}

/// `inf (1/T) log+ |Phi_T^wedge|` over periodic candidates in `d`.
pub fn upper_bound_search(spec: &SystemSpec, d: &BoxSet, opts: &SearchOptions) -> Result<SearchOutcome> {
    check_region(spec, d)?;
    Ok(search(spec, d, opts, &alpha_rate)?.0)
}

fn check_region(spec: &SystemSpec, d: &BoxSet) -> Result<()> {
    if d.dim() != spec.dim() {
        return Err(Error::DimensionMismatch(format!(
            "region of dimension {} for a {}-dimensional system",
            d.dim(),
            spec.dim()
        )));
    }
    Ok(())
}

/// `(1/T) log J+_T` on a periodic candidate with its splitting from the
/// provider; fails when the hyperbolicity check does.
pub fn unstable_det_rate(
    spec: &SystemSpec,
    provider: &dyn SplittingProvider,
    c: &PeriodicCandidate,
    horizon: f64,
    opts: &SearchOptions,
) -> Result<f64> {
    let p = c.period();
    let probe_periods = (opts.probe_horizon / p).ceil().max(1.0) as usize;
    let s = provider.splitting(spec, &c.control, &c.x0, p * probe_periods as f64)?;
    verify_hyperbolicity(&s, opts.probe_horizon.min(p * probe_periods as f64), opts.min_rate)?
        .into_result()?;
    let per = c.segment.step_matrices().len();
    let n = c.periods_for(horizon);
    let mut tracker = FrameTracker::new(s.plus_basis(0).clone());
    for m in s.step_matrices()[..per].iter().cycle().take(n * per) {
        tracker.push(m)?;
    }
    Ok(tracker.log_det() / (n as f64 * p))
}

/// `inf (1/T) log |det Phi_T restricted to E+|` over periodic candidates in `q`.
pub fn lower_bound_search(
    spec: &SystemSpec,
    q: &BoxSet,
    provider: &dyn SplittingProvider,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    check_region(spec, q)?;
    let rate = |c: &PeriodicCandidate, t: f64| unstable_det_rate(spec, provider, c, t, opts);
    // hyperbolicity failures must surface rather than be skipped
    let guesses = orbit_guesses(q, opts);
    for u in initial_controls(spec, opts)?.iter().take(1) {
        if let Some(c) = periodic_candidate(spec, u, q, &guesses, opts) {
            rate(&c, opts.horizon)?;
        }
    }
    Ok(search(spec, q, opts, &rate)?.0)
}

/// Whether distinct initial points stay confined under the same control.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniquenessDiagnostic {
    pub samples: usize,
    pub confined: usize,
    /// Pairs of confined samples whose end states differ by more than 1e-6.
    pub distinct_pairs: usize,
    /// Pairs of confined samples whose end states coincide within 1e-6.
    pub collisions: usize,
}

/// Samples points in `q`, integrates them under `u` for `horizon` and
/// compares the confined ones at the end.
pub fn uniqueness_diagnostic(
    spec: &SystemSpec,
    u: &ControlSignal,
    q: &BoxSet,
    samples: usize,
    horizon: f64,
    seed: u64,
    flow: &FlowOptions,
) -> UniquenessDiagnostic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0u64.wrapping_add(0x756e_6971));
    let points: Vec<Vec<f64>> = (0..samples)
        .map(|_| q.lo().iter().zip(q.hi()).map(|(a, b)| rng.random_range(*a..=*b)).collect())
        .collect();
    let n = u.step_index(horizon).max(1) as f64 * u.step();
    let ends: Vec<DVector<f64>> = points
        .iter()
        .filter_map(|p| {
            let seg = integrate_from(spec, 0.0, p, u, n, false, flow).ok()?;
            seg.states()
                .iter()
                .all(|x| q.contains(x.as_slice()))
                .then(|| seg.final_state().clone())
        })
        .collect();
    let mut distinct_pairs = 0;
    let mut collisions = 0;
    for i in 0..ends.len() {
        for j in i + 1..ends.len() {
            if (&ends[i] - &ends[j]).norm() > 1e-6 {
                distinct_pairs += 1;
            } else {
                collisions += 1;
            }
        }
    }
    UniquenessDiagnostic { samples, confined: ends.len(), distinct_pairs, collisions }
}

/// Spanning ladder settings for [`formula_report`].
#[derive(Debug, Clone)]
pub struct SpanningPlan {
    pub points: Vec<Vec<f64>>,
    pub taus: Vec<f64>,
    pub step: f64,
    pub levels: usize,
    pub exhaustive_limit: usize,
    pub options: SpanningOptions,
}

pub const TOL_SANDWICH: f64 = 1e-3;
pub const TOL_SPANNING: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanningDiagnostics {
    pub table: Vec<(f64, usize)>,
    pub candidates: Vec<usize>,
    pub reverify_failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyReport {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub spanning_slope: Option<f64>,
    pub upper_route: Option<SearchOutcome>,
    pub lower_route: Option<SearchOutcome>,
    pub spanning_route: Option<SpanningDiagnostics>,
    /// Error messages of routes that did not produce a value.
    pub failures: Vec<String>,
    pub lower_le_upper: Option<bool>,
    pub spanning_le_upper: Option<bool>,
    pub uniqueness: Option<UniquenessDiagnostic>,
}

/// Runs all routes and the sandwich checks; route failures are recorded, not raised.
pub fn formula_report(
    spec: &SystemSpec,
    q: &BoxSet,
    provider: &dyn SplittingProvider,
    search_opts: &SearchOptions,
    spanning: Option<&SpanningPlan>,
) -> EntropyReport {
    let mut failures = Vec::new();
    let upper = match check_region(spec, q).and_then(|_| search(spec, q, search_opts, &alpha_rate)) {
        Ok(r) => Some(r),
        Err(e) => {
            failures.push(format!("upper: {e}"));
            None
        }
    };
    let mut lower_route = match lower_bound_search(spec, q, provider, search_opts) {
        Ok(r) => Some(r),
        Err(e) => {
            failures.push(format!("lower: {e}"));
            None
        }
    };
    // the upper witness is a valid lower-route candidate as well
    if let (Some((_, c)), Some(lr)) = (&upper, lower_route.as_mut()) {
        if let Ok(v) = unstable_det_rate(spec, provider, c, search_opts.horizon, search_opts) {
            if v < lr.value {
                lr.value = v;
                lr.value_2t = unstable_det_rate(spec, provider, c, 2.0 * search_opts.horizon, search_opts)
                    .unwrap_or(v);
                lr.control = c.control.clone();
                lr.x0 = c.x0.clone();
                lr.trace.push(v);
            }
        }
    }
    let mut spanning_route = None;
    let mut spanning_slope = None;
    if let Some(plan) = spanning {
        let mut results = Vec::new();
        let mut ok = true;
        for &tau in &plan.taus {
            let r = default_generator(spec, plan.step, plan.levels, tau, plan.exhaustive_limit)
                .and_then(|g| spanning_count(spec, &plan.points, q, tau, g.as_ref(), &plan.options));
            match r {
                Ok(r) => results.push(r),
                Err(e) => {
                    failures.push(format!("spanning at tau = {tau}: {e}"));
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            match entropy_slope(&results) {
                Ok(s) => spanning_slope = Some(s),
                Err(e) => failures.push(format!("spanning slope: {e}")),
            }
        }
        spanning_route = Some(SpanningDiagnostics {
            table: results.iter().map(|r| (r.tau, r.count)).collect(),
            candidates: results.iter().map(|r| r.candidates).collect(),
            reverify_failures: results.iter().map(|r| r.reverify_failures.len()).sum(),
        });
    }
    let upper_value = upper.as_ref().map(|(o, _)| o.value);
    let lower_value = lower_route.as_ref().map(|o| o.value);
    let uniqueness = upper.as_ref().map(|(o, _)| {
        uniqueness_diagnostic(spec, &o.control, q, 8, search_opts.horizon, search_opts.seed, &search_opts.flow)
    });
    EntropyReport {
        lower: lower_value,
        upper: upper_value,
        spanning_slope,
        lower_le_upper: lower_value.zip(upper_value).map(|(l, u)| l <= u + TOL_SANDWICH),
        spanning_le_upper: spanning_slope.zip(upper_value).map(|(s, u)| s <= u + TOL_SPANNING),
        upper_route: upper.map(|(o, _)| o),
        lower_route,
        spanning_route,
        failures,
        uniqueness,
    }
}

/// Uniform grid with `n` points per axis on a box (midpoint for `n = 1`).
pub fn grid_points(b: &BoxSet, n: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![b.center()];
    }
    b.lattice(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitting::EstimatedSplitting;

    fn scalar() -> SystemSpec {
        SystemSpec::from_strings(1, &[&["x1"], &["1"]], &[-1.0], &[1.0]).unwrap()
    }

    fn q99() -> BoxSet {
        BoxSet::new(vec![-0.99], vec![0.99]).unwrap()
    }

    #[test]
    fn single_point_needs_one_control() {
        let s = scalar();
        let g = ExhaustiveAlphabet { step: 0.5, levels: 3, max_candidates: 10_000 };
        for tau in [1.0, 2.0, 3.0] {
            let r = spanning_count(&s, &[vec![0.0]], &q99(), tau, &g, &SpanningOptions::default())
                .unwrap();
            assert_eq!(r.count, 1);
            assert!(r.reverify_failures.is_empty());
        }
    }

    #[test]
    fn uncoverable_points_are_named() {
        let s = scalar();
        let g = ExhaustiveAlphabet { step: 0.5, levels: 3, max_candidates: 10_000 };
        let r = spanning_count(&s, &[vec![0.0], vec![5.0]], &q99(), 1.0, &g, &SpanningOptions::default());
        assert!(matches!(r, Err(Error::Uncoverable { points }) if points == vec![1]));
    }

    #[test]
    fn greedy_cover_prefers_large_rows_and_low_indices() {
        let mk = |bits: &[usize]| {
            let mut b = Bitset::new(6);
            bits.iter().for_each(|&i| b.set(i));
            b
        };
        let rows = vec![mk(&[0, 1]), mk(&[0, 1, 2, 3]), mk(&[2, 3, 4, 5]), mk(&[4, 5])];
        assert_eq!(greedy_cover(&rows, 6), vec![1, 2]);
    }

    #[test]
    fn slope_examples() {
        let ones: Vec<(f64, f64)> = (1..=5).map(|t| (t as f64, 1.0)).collect();
        assert_eq!(entropy_slope_from(&ones).unwrap(), 0.0);
        let exp: Vec<(f64, f64)> = (1..=6).map(|t| (t as f64, (0.7 * t as f64).exp())).collect();
        assert!((entropy_slope_from(&exp).unwrap() - 0.7).abs() < 1e-12);
        assert!(entropy_slope_from(&exp[..2]).is_err());
    }

    #[test]
    fn upper_bound_examples() {
        let opts = SearchOptions { descent_evals: 4, restarts: 2, ..Default::default() };
        let v = upper_bound_search(&scalar(), &q99(), &opts).unwrap();
        assert!((v.value - 1.0).abs() < 1e-3);
        let contraction = SystemSpec::from_strings(
            2,
            &[&["-x1", "-2*x2"], &["1", "0"], &["0", "1"]],
            &[-1.0, -1.0],
            &[1.0, 1.0],
        )
        .unwrap();
        let q = BoxSet::symmetric(2, 2.0).unwrap();
        assert_eq!(upper_bound_search(&contraction, &q, &opts).unwrap().value, 0.0);
        let far = BoxSet::new(vec![5.0], vec![6.0]).unwrap();
        assert!(matches!(upper_bound_search(&scalar(), &far, &opts), Err(Error::Admissibility(_))));
    }

    #[test]
    fn lower_bound_examples() {
        let opts = SearchOptions { descent_evals: 4, restarts: 2, ..Default::default() };
        let p = EstimatedSplitting::default();
        let v = lower_bound_search(&scalar(), &q99(), &p, &opts).unwrap();
        assert!((v.value - 1.0).abs() < 1e-3);
        let contraction = SystemSpec::from_strings(
            2,
            &[&["-x1", "-2*x2"], &["1", "0"], &["0", "1"]],
            &[-1.0, -1.0],
            &[1.0, 1.0],
        )
        .unwrap();
        let q = BoxSet::symmetric(2, 2.0).unwrap();
        let v = lower_bound_search(&contraction, &q, &p, &opts).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn shifted_witness_has_same_upper_rate() {
        let s = SystemSpec::from_strings(
            2,
            &[&["1.5*x1", "-0.7*x2"], &["1", "0"], &["0", "1"]],
            &[-1.0, -1.0],
            &[1.0, 1.0],
        )
        .unwrap();
        let q = BoxSet::new(vec![-0.6, -1.0], vec![0.6, 1.0]).unwrap();
        let opts = SearchOptions::default();
        let u = ControlSignal::periodic(
            0.25,
            vec![vec![0.3, -0.2], vec![-0.4, 0.5], vec![0.1, 0.1], vec![0.0, -0.6]],
            s.control_box(),
        )
        .unwrap();
        let base = upper_rate(&s, &u, &q, &[0.0, 0.0], &opts).unwrap();
        for k in 1..4 {
            let r = upper_rate(&s, &u.shift_steps(k), &q, &[0.0, 0.0], &opts).unwrap();
            assert!((r - base).abs() < 1e-6);
        }
    }
}

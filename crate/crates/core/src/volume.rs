//! Monte-Carlo volumes of Bowen balls
//! `B^tau_u(x, eps) = { y : |phi(t, y, u) - phi(t, x, u)| < eps, t in [0, tau] }`
//! and the boundedness check of `vol(B^tau) * J+(tau)` over a horizon ladder.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::det_cocycle;
use crate::error::{Error, Result};
use crate::flow::{fmt_num, integrate_from, visit_states, FlowOptions};
use crate::splitting::{verify_hyperbolicity, SplittingProvider};
use crate::system::{ControlSignal, SystemSpec};

/// Fixed number of sample partitions; each has its own ChaCha8 stream.
const PARTITIONS: usize = 64;

/// Where candidate points are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Uniform in the Euclidean `eps`-ball at `x`.
    Ball,
    /// Uniform in a coordinate box around `x` that contains the linearized
    /// Bowen ball: half-widths `min(eps, 1.5 eps min_t |row_i Phi(t)^{-1}|)`.
    LinearizedBox,
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeEstimate {
    pub tau: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub hits: usize,
    pub samples: usize,
    /// Volume of the sampling region.
    pub region_volume: f64,
    /// Set when no sample hit: the volume is then only bounded above.
    pub upper_bound: Option<f64>,
    /// Hits outside the linearized box shrunk by 1/1.5 (box sampling only);
    /// nonzero counts mean the enclosure may be too tight.
    pub boundary_hits: usize,
}

impl VolumeEstimate {
    pub fn upper_only(&self) -> bool {
        self.upper_bound.is_some()
    }
}

fn ball_volume(d: usize, r: f64) -> f64 {
    // V_d = pi^{d/2} / Gamma(d/2 + 1) via V_d = V_{d-2} * 2 pi / d
    let mut v = if d % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    v * r.powi(d as i32)
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rad = r * rng.random::<f64>().powf(1.0 / d as f64);
    g.into_iter().map(|v| v / norm * rad).collect()
}

/// Half-widths of the linearized enclosure, or `None` (use the ball) at
/// `tau = 0` or when some fundamental matrix is singular.
fn linearized_box(
    spec: &SystemSpec,
    u: &ControlSignal,
    x: &[f64],
    eps: f64,
    tau: f64,
    opts: &FlowOptions,
) -> Result<Option<Vec<f64>>> {
    let d = spec.dim();
    let mut half = vec![eps; d];
    if tau <= 0.0 {
        return Ok(None);
    }
    let seg = integrate_from(spec, 0.0, x, u, tau, true, opts)?;
    for phi in seg.fundamentals() {
        let Some(inv): Option<DMatrix<f64>> = phi.clone().try_inverse() else {
            return Ok(None);
        };
        for (i, h) in half.iter_mut().enumerate() {
            *h = h.min(1.5 * eps * inv.row(i).norm());
        }
    }
    Ok(Some(half))
}

/// Hit-or-miss estimate of `vol(B^tau_u(x, eps))` from `samples` uniform
/// points of the `eps`-ball at `x`.
#[allow(clippy::too_many_arguments)]
pub fn bowen_ball_volume(
    spec: &SystemSpec,
    u: &ControlSignal,
    x: &[f64],
    eps: f64,
    tau: f64,
    samples: usize,
    seed: u64,
    opts: &FlowOptions,
) -> Result<VolumeEstimate> {
    bowen_ball_volume_with(spec, u, x, eps, tau, samples, seed, Sampling::Ball, opts)
}

/// As [`bowen_ball_volume`] with a choice of sampling region. The box
/// region falls back to the ball when a fundamental matrix is singular.
#[allow(clippy::too_many_arguments)]
pub fn bowen_ball_volume_with(
    spec: &SystemSpec,
    u: &ControlSignal,
    x: &[f64],
    eps: f64,
    tau: f64,
    samples: usize,
    seed: u64,
    sampling: Sampling,
    opts: &FlowOptions,
) -> Result<VolumeEstimate> {
    if !(eps > 0.0) || !(tau >= 0.0) || samples == 0 {
        return Err(Error::InvalidArgument(
            "volume estimate needs eps > 0, tau >= 0 and at least one sample".into(),
        ));
    }
    let d = spec.dim();
    let reference: Vec<Vec<f64>> = integrate_from(spec, 0.0, x, u, tau, false, opts)?
        .states()
        .iter()
        .map(|s| s.as_slice().to_vec())
        .collect();
    let half = match sampling {
        Sampling::Ball => None,
        Sampling::LinearizedBox => linearized_box(spec, u, x, eps, tau, opts)?,
    };
    let region_volume = match &half {
        Some(h) => h.iter().map(|r| 2.0 * r).product(),
        None => ball_volume(d, eps),
    };
    let eps2 = eps * eps;
    let counts: Vec<Result<(usize, usize)>> = (0..PARTITIONS)
        .into_par_iter()
        .map(|p| {
            let n = samples / PARTITIONS + usize::from(p < samples % PARTITIONS);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut hits = 0;
            let mut boundary = 0;
            for _ in 0..n {
                let v = match &half {
                    Some(h) => h.iter().map(|r| rng.random_range(-r..=*r)).collect::<Vec<_>>(),
                    None => uniform_in_ball(&mut rng, d, eps),
                };
                let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
                let mut inside = true;
                let visited = visit_states(spec, 0.0, &y, u, tau, opts, |k, s| {
                    let r2: f64 = s.iter().zip(&reference[k]).map(|(a, b)| (a - b).powi(2)).sum();
                    inside = r2 < eps2;
                    inside
                });
                match visited {
                    Ok(_) if inside => {
                        hits += 1;
                        if let Some(h) = &half {
                            if v.iter().zip(h).any(|(vi, hi)| *hi < eps && vi.abs() > hi / 1.5) {
                                boundary += 1;
                            }
                        }
                    }
                    Ok(_) | Err(Error::BlowUp { .. }) | Err(Error::NonFinite { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok((hits, boundary))
        })
        .collect();
    let mut hits = 0;
    let mut boundary_hits = 0;
    for c in counts {
        let (h, b) = c?;
        hits += h;
        boundary_hits += b;
    }
    let p = hits as f64 / samples as f64;
    let estimate = region_volume * p;
    let stderr = region_volume * (p * (1.0 - p) / samples as f64).sqrt();
    let upper_bound = (hits == 0).then(|| 3.0 * region_volume / samples as f64);
    Ok(VolumeEstimate { tau, estimate, stderr, hits, samples, region_volume, upper_bound, boundary_hits })
}

#[derive(Debug, Clone)]
pub struct VolumeOptions {
    pub samples: usize,
    pub seed: u64,
    /// Largest accepted inflated max/min ratio of the products.
    pub threshold: f64,
    pub sampling: Sampling,
    pub probe_horizon: f64,
    pub min_rate: f64,
    pub flow: FlowOptions,
}

impl Default for VolumeOptions {
    fn default() -> Self {
        VolumeOptions {
            samples: 100_000,
            seed: 0,
            threshold: 10.0,
            sampling: Sampling::LinearizedBox,
            probe_horizon: 2.0,
            min_rate: 0.05,
            flow: FlowOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeSeries {
    pub eps: f64,
    pub taus: Vec<f64>,
    pub volumes: Vec<VolumeEstimate>,
    pub j_plus: Vec<f64>,
    pub products: Vec<f64>,
    /// `max(prod + 2 se J+) / min(prod - 2 se J+)`; infinite when a lower
    /// end is not positive.
    pub ratio: f64,
    pub threshold: f64,
    /// Inflated ratio above the threshold.
    pub drift: bool,
    /// Least-squares slope of `log(product)` against `tau`.
    pub log_slope: f64,
    pub hyperbolic: bool,
    /// Why the splitting was not used, when `hyperbolic` is false.
    pub note: Option<String>,
    pub sampling: Sampling,
}

impl VolumeSeries {
    /// CSV: `tau,vol,stderr,j_plus,product`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tau,vol,stderr,j_plus,product")?;
        for (i, v) in self.volumes.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_num(v.tau),
                fmt_num(v.estimate),
                fmt_num(v.stderr),
                fmt_num(self.j_plus[i]),
                fmt_num(self.products[i])
            )?;
        }
        Ok(())
    }
}

/// Products `vol(B^tau) * J+(tau)` over `taus`. `J+` comes from the
/// provider's unstable bundle after a hyperbolicity check. Without a usable
/// splitting `J+ = 1` (no expanding directions are credited), the series is
/// marked non-hyperbolic and the ratio test still runs.
#[allow(clippy::too_many_arguments)]
pub fn volume_lemma_check(
    spec: &SystemSpec,
    provider: &dyn SplittingProvider,
    u: &ControlSignal,
    x: &[f64],
    eps: f64,
    taus: &[f64],
    opts: &VolumeOptions,
) -> Result<VolumeSeries> {
    if taus.is_empty() || taus.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument("horizons must be nonnegative and nonempty".into()));
    }
    let tau_max = taus.iter().copied().fold(0.0, f64::max);
    let mut note = None;
    let splitting = match provider.splitting(spec, u, x, tau_max.max(opts.probe_horizon)) {
        Ok(s) => match verify_hyperbolicity(&s, opts.probe_horizon, opts.min_rate) {
            Ok(r) if r.passed() => Some(s),
            Ok(r) => {
                note = Some(format!("hyperbolicity check failed: {} violations", r.violations.len()));
                None
            }
            Err(e) => {
                note = Some(e.to_string());
                None
            }
        },
        Err(e) => {
            note = Some(e.to_string());
            None
        }
    };
    let trace = match &splitting {
        Some(s) => Some(det_cocycle(spec, u, x, tau_max, Some(s), &opts.flow)?),
        None => None,
    };
    let mut volumes = Vec::with_capacity(taus.len());
    let mut j_plus = Vec::with_capacity(taus.len());
    for &tau in taus {
        volumes.push(bowen_ball_volume_with(
            spec,
            u,
            x,
            eps,
            tau,
            opts.samples,
            opts.seed,
            opts.sampling,
            &opts.flow,
        )?);
        let j = match &trace {
            Some(tr) => {
                let k = tr.times.iter().position(|t| (t - tau).abs() < 1e-9).ok_or_else(|| {
                    Error::InvalidArgument(format!("horizon {tau} is not an integrator node"))
                })?;
                tr.values[k].exp()
            }
            None => 1.0,
        };
        j_plus.push(j);
    }
    let products: Vec<f64> = volumes.iter().zip(&j_plus).map(|(v, j)| v.estimate * j).collect();
    let hi = volumes.iter().zip(&j_plus).map(|(v, j)| (v.estimate + 2.0 * v.stderr) * j).fold(0.0, f64::max);
    let lo = volumes
        .iter()
        .zip(&j_plus)
        .map(|(v, j)| (v.estimate - 2.0 * v.stderr) * j)
        .fold(f64::INFINITY, f64::min);
    let ratio = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let log_slope = if products.iter().all(|p| *p > 0.0) && taus.len() >= 2 {
        slope(taus, &products.iter().map(|p| p.ln()).collect::<Vec<_>>())
    } else {
        f64::NAN
    };
    Ok(VolumeSeries {
        eps,
        taus: taus.to_vec(),
        volumes,
        j_plus,
        products,
        ratio,
        threshold: opts.threshold,
        drift: !(ratio <= opts.threshold),
        log_slope,
        hyperbolic: splitting.is_some(),
        note,
        sampling: opts.sampling,
    })
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

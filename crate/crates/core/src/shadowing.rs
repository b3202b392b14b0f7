//! Shift dynamics on sequences over a compact alphabet `X`: truncated
//! windows of bi-infinite sequences, the product metric
//! `D(xi, eta) = sup_i min{ d(xi_i, eta_i), 1/|i| }`, `delta`-chains of the
//! shift, the shadowing orbit `eta_i = xi^i_0`, and Morse/Lyapunov spectra of
//! additive cocycles over the shift.
//!
//! Windows keep indices `-W..=W`; every metric value carries the truncation
//! slack `1/(W+1)` that bounds the terms beyond the window.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::fmt_num;
use crate::system::{BoxSet, ControlSignal};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `min{a, 1/|i|}` with `min{a, 1/0} = a`.
fn capped(a: f64, i: i64) -> f64 {
    if i == 0 {
        a
    } else {
        a.min(1.0 / i.unsigned_abs() as f64)
    }
}

/// Entries `xi_{-W} .. xi_W` of a sequence in `(R^k)^Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqWindow {
    radius: usize,
    entries: Vec<Vec<f64>>,
}

impl SeqWindow {
    pub fn new(radius: usize, entries: Vec<Vec<f64>>) -> Result<Self> {
        if entries.len() != 2 * radius + 1 {
            return Err(Error::InvalidArgument(format!(
                "window of radius {radius} needs {} entries, got {}",
                2 * radius + 1,
                entries.len()
            )));
        }
        let k = entries[0].len();
        if entries.iter().any(|e| e.len() != k) {
            return Err(Error::InvalidArgument("window entries differ in dimension".into()));
        }
        Ok(SeqWindow { radius, entries })
    }

    /// Window of `i -> f(i)`.
    pub fn from_fn(radius: usize, mut f: impl FnMut(i64) -> Vec<f64>) -> Result<Self> {
        let r = radius as i64;
        SeqWindow::new(radius, (-r..=r).map(&mut f).collect())
    }

    /// `xi_k = u restricted to [k, k+1)` for a control on the unit grid.
    pub fn from_signal(u: &ControlSignal, radius: usize) -> Result<Self> {
        if (u.step() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "sequence windows need a unit control step, got {}",
                u.step()
            )));
        }
        let r = radius as i64;
        let entries = (-r..=r)
            .map(|k| {
                u.value_at_step(k)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::InvalidArgument(format!("control undefined at step {k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        SeqWindow::new(radius, entries)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn get(&self, i: i64) -> &[f64] {
        &self.entries[(i + self.radius as i64) as usize]
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// `s(xi)` on the indices still known, `-(W-1) ..= W-1`.
    pub fn shifted(&self) -> Result<SeqWindow> {
        if self.radius == 0 {
            return Err(Error::InvalidArgument("cannot shift a radius-0 window".into()));
        }
        let r = self.radius as i64 - 1;
        SeqWindow::from_fn(self.radius - 1, |i| self.get(i + 1).to_vec())
            .map(|w| {
                debug_assert_eq!(w.radius as i64, r);
                w
            })
    }

    /// Sub-window of smaller radius.
    pub fn truncate(&self, radius: usize) -> Result<SeqWindow> {
        if radius > self.radius {
            return Err(Error::InvalidArgument("cannot enlarge a window".into()));
        }
        SeqWindow::from_fn(radius, |i| self.get(i).to_vec())
    }

    pub fn within(&self, bounds: &BoxSet) -> bool {
        self.entries.iter().all(|e| bounds.contains_tol(e, 1e-12))
    }
}

/// Metric value over a window with the bound on the omitted terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncated {
    pub value: f64,
    /// Terms with `|i| > W` are at most this.
    pub slack: f64,
}

/// `sup_{|i| <= W} min{ d(xi_i, eta_i), 1/|i| }`.
pub fn product_metric(xi: &SeqWindow, eta: &SeqWindow) -> Result<Truncated> {
    if xi.radius != eta.radius {
        return Err(Error::InvalidArgument(format!(
            "window radii differ: {} vs {}",
            xi.radius, eta.radius
        )));
    }
    let r = xi.radius as i64;
    let value = (-r..=r).map(|i| capped(dist(xi.get(i), eta.get(i)), i)).fold(0.0, f64::max);
    Ok(Truncated { value, slack: 1.0 / (xi.radius as f64 + 1.0) })
}

/// `d(xi_i, eta_i) <= eps` for every window index with `|i| < 1/eps`.
pub fn close_on_core(xi: &SeqWindow, eta: &SeqWindow, eps: f64) -> bool {
    let r = xi.radius as i64;
    (-r..=r)
        .filter(|&i| (i.unsigned_abs() as f64) < 1.0 / eps)
        .all(|i| dist(xi.get(i), eta.get(i)) <= eps)
}

/// `D(s(a), b)` over the indices where both are known: `j in -W ..= W-1`,
/// comparing `a_{j+1}` with `b_j`.
pub fn shifted_distance(a: &SeqWindow, b: &SeqWindow) -> Result<f64> {
    if a.radius != b.radius || a.radius == 0 {
        return Err(Error::InvalidArgument("chain windows need equal positive radii".into()));
    }
    let r = a.radius as i64;
    Ok((-r..r).map(|j| capped(dist(a.get(j + 1), b.get(j)), j)).fold(0.0, f64::max))
}

/// `xi^0, ..., xi^n` with `D(s(xi^i), xi^{i+1}) <= delta`. A periodic chain
/// has `xi^n = xi^0` and period `n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainOfWindows {
    windows: Vec<SeqWindow>,
    delta: f64,
    periodic: bool,
}

impl ChainOfWindows {
    pub fn new(windows: Vec<SeqWindow>, delta: f64, periodic: bool) -> Result<Self> {
        if windows.len() < 2 {
            return Err(Error::InvalidArgument("a chain needs at least two windows".into()));
        }
        for (i, pair) in windows.windows(2).enumerate() {
            let d = shifted_distance(&pair[0], &pair[1])?;
            if d > delta * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "jump {d:.3e} at step {i} exceeds delta = {delta:.3e}"
                )));
            }
        }
        if periodic && windows[0] != windows[windows.len() - 1] {
            return Err(Error::InvalidArgument("periodic chain must end where it starts".into()));
        }
        Ok(ChainOfWindows { windows, delta, periodic })
    }

    pub fn windows(&self) -> &[SeqWindow] {
        &self.windows
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn radius(&self) -> usize {
        self.windows[0].radius
    }

    /// Steps `n` (the period for periodic chains).
    pub fn steps(&self) -> usize {
        self.windows.len() - 1
    }

    /// CSV: `i, j, x1..xk` for every window entry.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let k = self.windows[0].entries[0].len();
        let mut header = vec!["i".to_string(), "j".into()];
        header.extend((1..=k).map(|c| format!("x{c}")));
        writeln!(w, "{}", header.join(","))?;
        let r = self.radius() as i64;
        for (i, win) in self.windows.iter().enumerate() {
            for j in -r..=r {
                let mut row = vec![i.to_string(), j.to_string()];
                row.extend(win.get(j).iter().map(|v| fmt_num(*v)));
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

/// Shadowing orbit of a chain and its measured deviations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Shadow {
    /// `eta_0 .. eta_n` (one period for periodic chains).
    pub values: Vec<Vec<f64>>,
    pub period: Option<usize>,
    /// `(i, D(s^i eta, xi^i))` over the checked indices.
    pub deviations: Vec<(usize, f64)>,
    pub max_deviation: f64,
    /// `sqrt(delta) + 1/(W+1)`.
    pub bound: f64,
}

impl Shadow {
    /// `eta_i`, extended periodically when the chain was periodic.
    pub fn value(&self, i: i64) -> Option<&[f64]> {
        match self.period {
            Some(p) => Some(&self.values[i.rem_euclid(p as i64) as usize]),
            None => usize::try_from(i).ok().and_then(|i| self.values.get(i)).map(Vec::as_slice),
        }
    }

    /// Window of `s^i(eta)` when all its entries are known.
    pub fn orbit_window(&self, i: i64, radius: usize) -> Option<SeqWindow> {
        let r = radius as i64;
        let entries = (-r..=r).map(|j| self.value(i + j).map(<[f64]>::to_vec)).collect::<Option<_>>()?;
        SeqWindow::new(radius, entries).ok()
    }

    /// CSV: `i, eta_1..eta_k, deviation, max_deviation, bound`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let k = self.values[0].len();
        let mut header = vec!["i".to_string()];
        header.extend((1..=k).map(|c| format!("eta_{c}")));
        header.extend(["deviation".to_string(), "max_deviation".into(), "bound".into()]);
        writeln!(w, "{}", header.join(","))?;
        for &(i, dev) in &self.deviations {
            let mut row = vec![i.to_string()];
            row.extend(self.values[i].iter().map(|v| fmt_num(*v)));
            row.extend([fmt_num(dev), fmt_num(self.max_deviation), fmt_num(self.bound)]);
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `eta_i = xi^i_0`. Deviations are measured where `s^i(eta)` is known on
/// the whole window: `W <= i <= n - W` for open chains, every `i` in one
/// period for periodic chains.
pub fn shadow(chain: &ChainOfWindows) -> Result<Shadow> {
    let n = chain.steps();
    let w = chain.radius();
    let (values, period): (Vec<Vec<f64>>, Option<usize>) = if chain.periodic {
        (chain.windows[..n].iter().map(|x| x.get(0).to_vec()).collect(), Some(n))
    } else {
        (chain.windows.iter().map(|x| x.get(0).to_vec()).collect(), None)
    };
    let mut sh = Shadow {
        values,
        period,
        deviations: Vec::new(),
        max_deviation: 0.0,
        bound: chain.delta.sqrt() + 1.0 / (w as f64 + 1.0),
    };
    let checked: Vec<usize> = if chain.periodic {
        (0..n).collect()
    } else if n >= 2 * w {
        (w..=n - w).collect()
    } else {
        Vec::new()
    };
    for i in checked {
        let orbit = sh.orbit_window(i as i64, w).expect("indices inside the chain");
        let d = product_metric(&orbit, &chain.windows[i])?.value;
        sh.deviations.push((i, d));
        sh.max_deviation = sh.max_deviation.max(d);
    }
    Ok(sh)
}

/// `delta`-chain around the shift orbit of a random sequence over the box
/// `alphabet`: every window entry is moved by at most `delta / 2` (then
/// clamped into the box), so consecutive windows differ by at most `delta`.
/// With `period = Some(p)` the base sequence and the noise are
/// `p`-periodic and the chain has `p` steps.
pub fn random_chain(
    rng: &mut ChaCha8Rng,
    alphabet: &BoxSet,
    radius: usize,
    steps: usize,
    delta: f64,
    period: Option<usize>,
) -> Result<ChainOfWindows> {
    let k = alphabet.dim();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        alphabet.lo().iter().zip(alphabet.hi()).map(|(a, b)| rng.random_range(*a..=*b)).collect()
    };
    let n = period.unwrap_or(steps);
    if n == 0 {
        return Err(Error::InvalidArgument("chain needs at least one step".into()));
    }
    let r = radius as i64;
    let base: Vec<Vec<f64>> = match period {
        Some(p) => (0..p).map(|_| draw(rng)).collect(),
        None => (0..n + 2 * radius + 1).map(|_| draw(rng)).collect(),
    };
    let base_at = |m: i64| -> &Vec<f64> {
        match period {
            Some(p) => &base[m.rem_euclid(p as i64) as usize],
            None => &base[(m + r) as usize],
        }
    };
    // per-coordinate noise of radius delta / (2 sqrt k) keeps the Euclidean jump <= delta / 2
    let amp = 0.5 * delta / (k as f64).sqrt();
    let mut windows = Vec::with_capacity(n + 1);
    for _ in 0..n {
        let i = windows.len() as i64;
        let w = SeqWindow::from_fn(radius, |j| {
            base_at(i + j)
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    let noisy = v + if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 };
                    noisy.clamp(alphabet.lo()[c], alphabet.hi()[c])
                })
                .collect()
        })?;
        windows.push(w);
    }
    if period.is_some() {
        windows.push(windows[0].clone());
    } else {
        let i = n as i64;
        windows.push(SeqWindow::from_fn(radius, |j| base_at(i + j).clone())?);
    }
    ChainOfWindows::new(windows, delta, period.is_some())
}

/// Window of the periodic sequence `... w w w ...` shifted by `i`.
pub fn periodic_window(word: &[Vec<f64>], i: i64, radius: usize) -> Result<SeqWindow> {
    let p = word.len() as i64;
    SeqWindow::from_fn(radius, |j| word[(i + j).rem_euclid(p) as usize].clone())
}

/// Settings for sampling regular periodic `eps`-chains.
#[derive(Debug, Clone)]
pub struct MorseConfig {
    /// Finite alphabet, e.g. a quantized control range.
    pub alphabet: Vec<Vec<f64>>,
    /// Decreasing `eps` values.
    pub eps_ladder: Vec<f64>,
    pub max_period: usize,
    pub samples_per_level: usize,
    pub seed: u64,
}

impl MorseConfig {
    pub fn new(alphabet: Vec<Vec<f64>>, eps0: f64) -> Self {
        MorseConfig {
            alphabet,
            eps_ladder: vec![eps0, eps0 / 2.0, eps0 / 4.0],
            max_period: 6,
            samples_per_level: 200,
            seed: 0,
        }
    }

    /// Window radius large enough to hold the free entries of every level.
    pub fn radius(&self) -> usize {
        let eps_min = self.eps_ladder.iter().copied().fold(f64::INFINITY, f64::min);
        (1.0 / eps_min).ceil() as usize + 2
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorseLevel {
    pub eps: f64,
    pub lo: f64,
    pub hi: f64,
    /// Periodic words (entry 0 of the windows) of the extremal chains.
    pub lo_chain: Vec<Vec<f64>>,
    pub hi_chain: Vec<Vec<f64>>,
    /// Chains contributing at this level, including those of finer levels.
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorseReport {
    pub levels: Vec<MorseLevel>,
    pub radius: usize,
}

impl MorseReport {
    /// Interval at the smallest `eps`.
    pub fn endpoints(&self) -> (f64, f64) {
        let last = self.levels.last().expect("nonempty ladder");
        (last.lo, last.hi)
    }

    /// Every level's interval contains the next one.
    pub fn is_nested(&self) -> bool {
        self.levels.windows(2).all(|p| p[0].lo <= p[1].lo && p[0].hi >= p[1].hi)
    }
}

/// Finite-time Morse exponent `(1/n) sum_{i<n} a(1, xi^i)` of a chain with
/// unit times.
pub fn morse_exponent(a: &dyn Fn(&SeqWindow) -> f64, chain: &ChainOfWindows) -> f64 {
    let n = chain.steps();
    chain.windows[..n].iter().map(a).sum::<f64>() / n as f64
}

/// Regular periodic `eps`-chain: the orbit of the periodic word with the
/// entries at `|j| >= 1/eps + 1` replaced by random letters (periodically in
/// the step index), so every jump is at most `eps`.
fn sampled_chain(
    rng: &mut ChaCha8Rng,
    cfg: &MorseConfig,
    word: &[Vec<f64>],
    eps: f64,
    radius: usize,
) -> Result<ChainOfWindows> {
    let n = word.len();
    let free_from = (1.0 / eps).floor() as i64 + 1;
    let noise: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..2 * radius + 1).map(|_| rng.random_range(0..cfg.alphabet.len())).collect())
        .collect();
    let mut windows = Vec::with_capacity(n + 1);
    for i in 0..n {
        let w = SeqWindow::from_fn(radius, |j| {
            if j.abs() >= free_from {
                cfg.alphabet[noise[i][(j + radius as i64) as usize]].clone()
            } else {
                word[(i as i64 + j).rem_euclid(n as i64) as usize].clone()
            }
        })?;
        windows.push(w);
    }
    windows.push(windows[0].clone());
    ChainOfWindows::new(windows, eps, true)
}

/// Hull of finite-time Morse exponents over sampled regular periodic
/// chains at each `eps` of the ladder. Chains sampled at a finer level are
/// also chains of every coarser level and count there too, so the
/// intervals are nested by construction. Constant words are always included.
pub fn morse_spectrum(a: &dyn Fn(&SeqWindow) -> f64, cfg: &MorseConfig) -> Result<MorseReport> {
    if cfg.alphabet.is_empty() || cfg.eps_ladder.is_empty() || cfg.max_period == 0 {
        return Err(Error::InvalidArgument("Morse sampling needs letters, eps values and periods".into()));
    }
    let mut ladder = cfg.eps_ladder.clone();
    ladder.sort_by(|a, b| b.total_cmp(a));
    let radius = cfg.radius();
    // per level: (value, word) of sampled chains
    let mut per_level: Vec<Vec<(f64, Vec<Vec<f64>>)>> = Vec::with_capacity(ladder.len());
    for (level, &eps) in ladder.iter().enumerate() {
        let mut found = Vec::new();
        for letter in &cfg.alphabet {
            let word = vec![letter.clone()];
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((level as u64) << 40));
            let chain = sampled_chain(&mut rng, cfg, &word, eps, radius)?;
            found.push((morse_exponent(a, &chain), word));
        }
        for s in 0..cfg.samples_per_level {
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed.wrapping_add(((level as u64) << 32) | s as u64),
            );
            let p = rng.random_range(1..=cfg.max_period);
            let word: Vec<Vec<f64>> =
                (0..p).map(|_| cfg.alphabet[rng.random_range(0..cfg.alphabet.len())].clone()).collect();
            let chain = sampled_chain(&mut rng, cfg, &word, eps, radius)?;
            found.push((morse_exponent(a, &chain), word));
        }
        per_level.push(found);
    }
    let mut levels = Vec::with_capacity(ladder.len());
    for (level, &eps) in ladder.iter().enumerate() {
        let pool = per_level[level..].iter().flatten();
        let mut lo: Option<&(f64, Vec<Vec<f64>>)> = None;
        let mut hi: Option<&(f64, Vec<Vec<f64>>)> = None;
        let mut samples = 0;
        for item in pool {
            samples += 1;
            if lo.is_none_or(|l| item.0 < l.0) {
                lo = Some(item);
            }
            if hi.is_none_or(|h| item.0 > h.0) {
                hi = Some(item);
            }
        }
        let (lo, hi) = (lo.expect("nonempty"), hi.expect("nonempty"));
        levels.push(MorseLevel {
            eps,
            lo: lo.0,
            hi: hi.0,
            lo_chain: lo.1.clone(),
            hi_chain: hi.1.clone(),
            samples,
        });
    }
    Ok(MorseReport { levels, radius })
}

/// `min (1/N) sum_{i<N} a(1, s^i u)` over periodic sequences with period in
/// `periods`: all words when there are at most `max_words` of a length,
/// otherwise `max_words` random ones.
pub fn min_lyapunov_via_periodic(
    a: &dyn Fn(&SeqWindow) -> f64,
    alphabet: &[Vec<f64>],
    periods: std::ops::RangeInclusive<usize>,
    radius: usize,
    max_words: usize,
    seed: u64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if alphabet.is_empty() || periods.is_empty() || *periods.start() == 0 {
        return Err(Error::InvalidArgument("need letters and positive periods".into()));
    }
    let l = alphabet.len();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in periods {
        let total = l.checked_pow(n as u32).filter(|t| *t <= max_words);
        let codes: Vec<Vec<usize>> = match total {
            Some(t) => (0..t)
                .map(|mut c| {
                    (0..n)
                        .map(|_| {
                            let d = c % l;
                            c /= l;
                            d
                        })
                        .collect()
                })
                .collect(),
            None => (0..max_words).map(|_| (0..n).map(|_| rng.random_range(0..l)).collect()).collect(),
        };
        for code in codes {
            let word: Vec<Vec<f64>> = code.iter().map(|&c| alphabet[c].clone()).collect();
            let mut sum = 0.0;
            for i in 0..n as i64 {
                sum += a(&periodic_window(&word, i, radius)?);
            }
            let v = sum / n as f64;
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, word));
            }
        }
    }
    Ok(best.expect("at least one word"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn scalar_window(radius: usize, f: impl Fn(i64) -> f64) -> SeqWindow {
        SeqWindow::from_fn(radius, |i| vec![f(i)]).unwrap()
    }

    #[test]
    fn metric_examples() {
        let x = scalar_window(5, |i| i as f64 * 0.1);
        let m = product_metric(&x, &x).unwrap();
        assert_eq!(m.value, 0.0);
        assert!((m.slack - 1.0 / 6.0).abs() < 1e-15);
        let y = scalar_window(5, |i| if i.abs() >= 2 { 1.0 } else { 0.0 });
        let z = scalar_window(5, |_| 0.0);
        assert_eq!(product_metric(&y, &z).unwrap().value, 0.5);
        assert!(product_metric(&y, &scalar_window(4, |_| 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn metric_is_symmetric_and_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = SeqWindow::from_fn(8, |_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).unwrap();
            let b = SeqWindow::from_fn(8, |_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).unwrap();
            let ab = product_metric(&a, &b).unwrap().value;
            prop_assert_eq!(ab, product_metric(&b, &a).unwrap().value);
            prop_assert!(ab <= dist(a.get(0), b.get(0)).max(1.0));
        }
    }

    #[test]
    fn exact_orbit_is_its_own_shadow() {
        let base = |m: i64| vec![((m * 7 + 3) % 11) as f64 / 11.0];
        let windows: Vec<SeqWindow> =
            (0..30).map(|i| SeqWindow::from_fn(4, |j| base(i + j)).unwrap()).collect();
        let chain = ChainOfWindows::new(windows, 0.0, false).unwrap();
        let sh = shadow(&chain).unwrap();
        for i in 0..30 {
            assert_eq!(sh.values[i as usize], base(i));
        }
        assert_eq!(sh.max_deviation, 0.0);
    }

    #[test]
    fn invalid_chains_are_rejected() {
        let a = scalar_window(3, |_| 0.0);
        let b = scalar_window(3, |i| if i == 0 { 0.5 } else { 0.0 });
        assert!(ChainOfWindows::new(vec![a.clone(), b.clone()], 0.1, false).is_err());
        assert!(ChainOfWindows::new(vec![a.clone(), b], 0.5, true).is_err());
        assert!(ChainOfWindows::new(vec![a], 0.5, false).is_err());
    }

    #[test]
    fn random_chains_are_shadowed() {
        let bx = BoxSet::symmetric(2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for delta in [1e-2, 1e-4] {
            let chain = random_chain(&mut rng, &bx, 16, 60, delta, None).unwrap();
            let sh = shadow(&chain).unwrap();
            assert!(!sh.deviations.is_empty());
            assert!(sh.max_deviation <= sh.bound);
            let chain = random_chain(&mut rng, &bx, 16, 0, delta, Some(5)).unwrap();
            let sh = shadow(&chain).unwrap();
            assert_eq!(sh.period, Some(5));
            assert_eq!(sh.value(7), sh.value(2));
            assert!(sh.max_deviation <= sh.bound);
        }
    }

    #[test]
    fn sequence_conjugacy_with_control_shift() {
        let bx = BoxSet::symmetric(1, 1.0).unwrap();
        let u = ControlSignal::periodic(1.0, (0..7).map(|k| vec![(k as f64).sin()]).collect(), &bx).unwrap();
        let lhs = SeqWindow::from_signal(&u.shift(1.0), 5).unwrap();
        let rhs = SeqWindow::from_signal(&u, 6).unwrap().shifted().unwrap();
        assert_eq!(lhs, rhs);
        let fine = ControlSignal::periodic(0.5, vec![vec![0.0]], &bx).unwrap();
        assert!(SeqWindow::from_signal(&fine, 2).is_err());
    }

    fn quantized(levels: usize) -> Vec<Vec<f64>> {
        (0..levels).map(|i| vec![-1.0 + 2.0 * i as f64 / (levels - 1) as f64]).collect()
    }

    #[test]
    fn morse_examples() {
        let constant = |_: &SeqWindow| 0.7;
        let rep = morse_spectrum(&constant, &MorseConfig::new(quantized(5), 0.2)).unwrap();
        for l in &rep.levels {
            assert!((l.lo - 0.7).abs() < 1e-15 && (l.hi - 0.7).abs() < 1e-15);
        }
        let first = |w: &SeqWindow| w.get(0)[0];
        let rep = morse_spectrum(&first, &MorseConfig::new(quantized(5), 0.2)).unwrap();
        let (lo, hi) = rep.endpoints();
        assert!((lo + 1.0).abs() < 0.05 && (hi - 1.0).abs() < 0.05);
        assert!(rep.is_nested());
        let single = morse_spectrum(&first, &MorseConfig::new(vec![vec![0.3]], 0.2)).unwrap();
        assert_eq!(single.endpoints(), (0.3, 0.3));
    }

    #[test]
    fn periodic_minimum_examples() {
        let first = |w: &SeqWindow| w.get(0)[0];
        let (v, word) = min_lyapunov_via_periodic(&first, &quantized(5), 1..=4, 3, 10_000, 0).unwrap();
        assert_eq!(v, -1.0);
        assert!(word.iter().all(|x| x[0] == -1.0));
        let (v, _) = min_lyapunov_via_periodic(&|_: &SeqWindow| 2.5, &quantized(3), 1..=3, 2, 100, 0).unwrap();
        assert_eq!(v, 2.5);
        let pq = vec![vec![0.4], vec![-0.2]];
        let (v, _) = min_lyapunov_via_periodic(&first, &pq, 1..=1, 2, 100, 0).unwrap();
        assert_eq!(v, -0.2);
    }
}

//! Batch front end: `inventropy <command> --config FILE [--seed N] [--workers N] [--out DIR]`.
//!
//! Every run writes its artifacts and a `manifest.json` into the output
//! directory. Exit status 1 means a configuration error, 2 a numerical
//! failure (a `diagnostic.json` is written alongside).

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cocycle::{alpha, det_cocycle, floquet_exponents, gramian_rank, positive_exponent_sum};
use crate::config::Config;
use crate::entropy::{
    default_generator, entropy_slope, formula_report, grid_points, spanning_count, write_spanning_csv,
    SearchOptions, SpanningOptions, SpanningPlan,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::flow::{find_periodic_orbit, integrate_from, FlowOptions, NewtonOptions};
use crate::graph::{build_graph, chain_control_sets};
use crate::shadowing::{morse_spectrum, random_chain, shadow, MorseConfig, SeqWindow};
use crate::splitting::{estimate_splitting, verify_hyperbolicity, EstimatedSplitting, SplittingOptions};
use crate::system::{ControlSignal, SystemSpec};
use crate::volume::{volume_lemma_check, Sampling, VolumeOptions};

/// Version of the CSV/JSON layouts written by the commands.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Integrate,
    Cocycle,
    Floquet,
    Gramian,
    Splitting,
    Chainsets,
    Spanning,
    Entropy,
    Shadow,
    Morse,
    Volcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Integrate => "integrate",
            Command::Cocycle => "cocycle",
            Command::Floquet => "floquet",
            Command::Gramian => "gramian",
            Command::Splitting => "splitting",
            Command::Chainsets => "chainsets",
            Command::Spanning => "spanning",
            Command::Entropy => "entropy",
            Command::Shadow => "shadow",
            Command::Morse => "morse",
            Command::Volcheck => "volcheck",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "inventropy", version, about = "Invariance entropy estimation for control-affine systems")]
pub struct Cli {
    pub command: Command,
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the `seed` key of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be positive");
            return 1;
        }
        // fails only when a pool already exists, e.g. in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(outputs) => {
            for p in outputs {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                let diag = json!({
                    "command": cli.command.name(),
                    "kind": kind_name(&e),
                    "error": e.to_string(),
                });
                let _ = std::fs::create_dir_all(&cli.out);
                let _ = write_json(&cli.out.join("diagnostic.json"), &diag);
                2
            } else {
                1
            }
        }
    }
}

fn kind_name(e: &Error) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("").to_string()
}

/// Loaded run configuration: the command keys plus the system they refer to.
pub struct RunConfig {
    pub path: PathBuf,
    pub text: String,
    pub config: Config,
    system: Option<SystemSpec>,
    pub system_text: Option<String>,
}

impl RunConfig {
    /// Reads `path`. The system comes from the file named by `system`
    /// (relative to the configuration's directory) or, without that key,
    /// from the configuration itself when it has a `dim` key.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config = Config::parse(&text)?;
        let (system, system_text) = match config.get("system") {
            Some(rel) => {
                let base = path.parent().unwrap_or(Path::new("."));
                let sys_path = base.join(rel);
                let sys_text = std::fs::read_to_string(&sys_path).map_err(|e| {
                    Error::Config(format!("cannot read system file {}: {e}", sys_path.display()))
                })?;
                (Some(SystemSpec::from_config(&Config::parse(&sys_text)?)?), Some(sys_text))
            }
            None if config.get("dim").is_some() => (Some(SystemSpec::from_config(&config)?), None),
            None => (None, None),
        };
        Ok(RunConfig { path: path.to_path_buf(), text, config, system, system_text })
    }

    pub fn system(&self) -> Result<&SystemSpec> {
        self.system.as_ref().ok_or_else(|| {
            Error::Config(format!("{}: no `system` file and no inline `dim`", self.path.display()))
        })
    }

    pub fn flow(&self) -> Result<FlowOptions> {
        let c = &self.config;
        let substeps = c.usize_or("flow.substeps", 10)?;
        if substeps == 0 {
            return Err(Error::Config("`flow.substeps` must be positive".into()));
        }
        Ok(FlowOptions { substeps, blowup: c.positive_f64_or("flow.blowup", 1e6)? })
    }

    /// `control.step`, `control.values` (flattened, `inputs` numbers per
    /// step; default: center of U) and `control.periodic` (default true).
    pub fn control(&self) -> Result<ControlSignal> {
        let c = &self.config;
        let spec = self.system()?;
        let step = c.positive_f64_or("control.step", 0.1)?;
        if spec.inputs() == 0 {
            return Ok(ControlSignal::autonomous(step));
        }
        let m = spec.inputs();
        let values: Vec<Vec<f64>> = match c.get("control.values") {
            Some(_) => {
                let flat = c.f64_list("control.values")?;
                if flat.is_empty() || flat.len() % m != 0 {
                    return Err(Error::Config(format!(
                        "`control.values` needs a multiple of {m} numbers, got {}",
                        flat.len()
                    )));
                }
                flat.chunks(m).map(<[f64]>::to_vec).collect()
            }
            None => vec![spec.control_box().center()],
        };
        let built = if c.bool_or("control.periodic", true)? {
            ControlSignal::periodic(step, values, spec.control_box())
        } else {
            ControlSignal::finite(step, values, spec.control_box())
        };
        built.map_err(|e| Error::Config(format!("control: {e}")))
    }

    pub fn x0(&self) -> Result<Vec<f64>> {
        let dim = self.system()?.dim();
        let x = self.config.f64_list_or("x0", &vec![0.0; dim])?;
        if x.len() != dim {
            return Err(Error::Config(format!("`x0` has {} coordinates, system has {dim}", x.len())));
        }
        Ok(x)
    }

    pub fn splitting_options(&self) -> Result<SplittingOptions> {
        let c = &self.config;
        let d = SplittingOptions::default();
        let dims = match c.get("splitting.dims") {
            Some(_) => {
                let v = c.usize_list("splitting.dims")?;
                if v.len() != 2 {
                    return Err(Error::Config("`splitting.dims` needs two numbers: d-, d+".into()));
                }
                Some((v[0], v[1]))
            }
            None => None,
        };
        Ok(SplittingOptions {
            horizon: c.positive_f64_or("splitting.horizon", d.horizon)?,
            max_horizon: c.positive_f64_or("splitting.max_horizon", d.max_horizon)?,
            tol_split: c.positive_f64_or("splitting.tol", d.tol_split)?,
            dims,
            region: None,
            flow: self.flow()?,
        })
    }

    pub fn search_options(&self, seed: u64) -> Result<SearchOptions> {
        let c = &self.config;
        let d = SearchOptions::default();
        Ok(SearchOptions {
            step: c.positive_f64_or("search.step", d.step)?,
            period_steps: c.usize_or("search.period_steps", d.period_steps)?.max(1),
            levels: c.usize_or("search.levels", d.levels)?.max(1),
            restarts: c.usize_or("search.restarts", d.restarts)?,
            descent_evals: c.usize_or("search.descent_evals", d.descent_evals)?,
            horizon: c.positive_f64_or("search.horizon", d.horizon)?,
            eta: c.positive_f64_or("search.eta", d.eta)?,
            random_guesses: c.usize_or("search.random_guesses", d.random_guesses)?,
            seed,
            min_rate: c.positive_f64_or("search.min_rate", d.min_rate)?,
            probe_horizon: c.positive_f64_or("search.probe_horizon", d.probe_horizon)?,
            flow: self.flow()?,
            newton: NewtonOptions {
                max_iter: c.usize_or("newton.max_iter", NewtonOptions::default().max_iter)?,
                tol: c.positive_f64_or("newton.tol", NewtonOptions::default().tol)?,
            },
        })
    }

    pub fn spanning_plan(&self) -> Result<SpanningPlan> {
        let c = &self.config;
        let k = c.boxset("k")?;
        let points = grid_points(&k, c.usize_or("k.points", 401)?.max(1));
        let taus = c.f64_list_or("spanning.taus", &[1.0, 2.0, 3.0, 4.0, 5.0])?;
        Ok(SpanningPlan {
            points,
            taus,
            step: c.positive_f64_or("spanning.step", 0.25)?,
            levels: c.usize_or("spanning.levels", 3)?.max(1),
            exhaustive_limit: c.usize_or("spanning.exhaustive_limit", 4096)?,
            options: SpanningOptions {
                flow: self.flow()?,
                reverify: c.bool_or("spanning.reverify", true)?,
            },
        })
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        write_json(&p, value)
    }
}

/// Runs the command of `cli`; returns the written files, manifest last.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let rc = RunConfig::load(&cli.config)?;
    let seed = match cli.seed {
        Some(s) => s,
        None => rc.config.u64_or("seed", 0)?,
    };
    std::fs::create_dir_all(&cli.out)?;
    let mut out = Outputs { dir: cli.out.clone(), files: Vec::new() };
    let result = dispatch(cli.command, &rc, seed, &mut out);
    let manifest = json!({
        "tool": "inventropy",
        "version": env!("CARGO_PKG_VERSION"),
        "schema_version": SCHEMA_VERSION,
        "command": cli.command.name(),
        "config": rc.path.display().to_string(),
        "config_sha256": sha256_hex(rc.text.as_bytes()),
        "system_sha256": rc.system_text.as_ref().map(|t| sha256_hex(t.as_bytes())),
        "seed": seed,
        "workers": rayon::current_num_threads(),
        "timestamp_unix": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "outputs": out.files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect::<Vec<_>>(),
        "status": match &result { Ok(()) => "ok".to_string(), Err(e) => format!("error: {e}") },
    });
    let mp = out.dir.join("manifest.json");
    write_json(&mp, &manifest)?;
    result?;
    out.files.push(mp);
    Ok(out.files)
}

fn dispatch(command: Command, rc: &RunConfig, seed: u64, out: &mut Outputs) -> Result<()> {
    let c = &rc.config;
    let loaded = match command {
        Command::Shadow | Command::Morse => None,
        _ => Some(rc.system()?),
    };
    let spec = || loaded.expect("system loaded for this command");
    match command {
        Command::Integrate => {
            let seg = integrate_from(
                spec(),
                0.0,
                &rc.x0()?,
                &rc.control()?,
                c.positive_f64("tau")?,
                c.bool_or("variational", false)?,
                &rc.flow()?,
            )?;
            seg.write_csv(create(&out.path("trajectory.csv"))?)?;
        }
        Command::Cocycle => {
            let (u, x0, tau, flow) = (rc.control()?, rc.x0()?, c.positive_f64("tau")?, rc.flow()?);
            let trace = match c.str_or("cocycle.kind", "exterior") {
                "exterior" => alpha(spec(), &u, &x0, tau, &flow)?,
                "determinant" => match c.str_or("cocycle.bundle", "full") {
                    "full" => det_cocycle(spec(), &u, &x0, tau, None, &flow)?,
                    "unstable" => {
                        let s = estimate_splitting(spec(), &u, &x0, tau, &rc.splitting_options()?)?;
                        det_cocycle(spec(), &u, &x0, tau, Some(&s), &flow)?
                    }
                    other => return Err(Error::Config(format!("`cocycle.bundle`: unknown `{other}`"))),
                },
                other => return Err(Error::Config(format!("`cocycle.kind`: unknown `{other}`"))),
            };
            trace.write_csv(create(&out.path("cocycle.csv"))?)?;
            out.json(
                "cocycle.json",
                &json!({ "kind": trace.kind, "tau": tau, "final_value": trace.final_value(), "rate": trace.rate() }),
            )?;
        }
        Command::Floquet => {
            let u = rc.control()?;
            if !u.is_periodic() {
                return Err(Error::Config("floquet needs a periodic control".into()));
            }
            let newton = rc.search_options(seed)?.newton;
            let orbit = find_periodic_orbit(spec(), &u, &rc.x0()?, &rc.flow()?, &newton)?;
            let exps = floquet_exponents(orbit.monodromy(), orbit.period)?;
            out.json(
                "floquet.json",
                &json!({
                    "period": orbit.period,
                    "x0": orbit.x0.as_slice(),
                    "closure": orbit.closure,
                    "exponents": exps.iter().map(|(v, m)| json!({"exponent": v, "multiplicity": m})).collect::<Vec<_>>(),
                    "positive_sum": positive_exponent_sum(&exps),
                }),
            )?;
        }
        Command::Gramian => {
            let t2 = c.positive_f64("tau")?;
            let t1 = c.f64_or("gramian.t1", 0.0)?;
            let rep = gramian_rank(spec(), &rc.control()?, &rc.x0()?, t1, t2, &rc.flow()?)?;
            out.json("gramian.json", &rep)?;
        }
        Command::Splitting => {
            let u = rc.control()?;
            let tau = c.positive_f64("tau")?;
            let s = estimate_splitting(spec(), &u, &rc.x0()?, tau, &rc.splitting_options()?)?;
            s.write_csv(create(&out.path("splitting.csv"))?)?;
            let probe = c.positive_f64_or("splitting.probe_horizon", 2.0)?.min(s.time(s.len() - 1));
            let report = verify_hyperbolicity(&s, probe, c.positive_f64_or("splitting.min_rate", 0.05)?)?;
            out.json(
                "splitting.json",
                &json!({
                    "dims": [s.dims().0, s.dims().1],
                    "horizon": s.horizon,
                    "convergence": s.convergence,
                    "exponents": s.exponents,
                    "c_hat": s.c_hat,
                    "lambda_hat": s.lambda_hat,
                    "angle_floor": s.angle_floor,
                    "hyperbolicity": report,
                }),
            )?;
            report.into_result()?;
        }
        Command::Chainsets => {
            let region = c.region("region")?;
            let g = build_graph(
                spec(),
                &region,
                c.positive_f64("eps")?,
                c.positive_f64("tau_step")?,
                c.usize_or("levels", 5)?.max(1),
                &rc.flow()?,
            )?;
            g.write_edges_csv(create(&out.path("edges.csv"))?)?;
            let sets = chain_control_sets(&g);
            out.json(
                "chainsets.json",
                &json!({
                    "cells": region.cell_count(),
                    "edges": g.edge_count(),
                    "blown_up": g.blown_up(),
                    "nontrivial_sets": sets.len(),
                    "sets": sets,
                }),
            )?;
        }
        Command::Spanning => {
            let q = c.boxset("q")?;
            let plan = rc.spanning_plan()?;
            let mut results = Vec::with_capacity(plan.taus.len());
            for &tau in &plan.taus {
                let generator = default_generator(spec(), plan.step, plan.levels, tau, plan.exhaustive_limit)?;
                results.push(spanning_count(spec(), &plan.points, &q, tau, generator.as_ref(), &plan.options)?);
            }
            write_spanning_csv(&results, create(&out.path("spanning.csv"))?)?;
            let slope = if results.len() >= 3 { Some(entropy_slope(&results)?) } else { None };
            out.json(
                "spanning.json",
                &json!({
                    "points": plan.points.len(),
                    "slope": slope,
                    "table": results.iter().map(|r| json!({
                        "tau": r.tau,
                        "count": r.count,
                        "candidates": r.candidates,
                        "generator": r.generator,
                        "reverify_failures": r.reverify_failures.len(),
                    })).collect::<Vec<_>>(),
                }),
            )?;
        }
        Command::Entropy => {
            let q = c.boxset("q")?;
            let provider = EstimatedSplitting { options: rc.splitting_options()? };
            let plan = if c.bool_or("spanning.enabled", false)? { Some(rc.spanning_plan()?) } else { None };
            let report = formula_report(spec(), &q, &provider, &rc.search_options(seed)?, plan.as_ref());
            out.json("entropy.json", &report)?;
            if report.lower.is_none() && report.upper.is_none() {
                return Err(Error::NonConvergence {
                    what: "entropy routes".into(),
                    residual: f64::NAN,
                });
            }
        }
        Command::Shadow => {
            let alphabet = c.boxset("alphabet")?;
            let radius = c.usize_or("shadow.radius", 64)?;
            if radius == 0 {
                return Err(Error::Config("`shadow.radius` must be positive".into()));
            }
            let delta = c.positive_f64("shadow.delta")?;
            let period = match c.usize_or("shadow.period", 0)? {
                0 => None,
                p => Some(p),
            };
            let steps = c.usize_or("shadow.steps", 200)?;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let chain = random_chain(&mut rng, &alphabet, radius, steps, delta, period)
                .map_err(|e| Error::Config(format!("shadow: {e}")))?;
            if c.bool_or("shadow.write_chain", false)? {
                chain.write_csv(create(&out.path("chain.csv"))?)?;
            }
            let sh = shadow(&chain)?;
            sh.write_csv(create(&out.path("shadow.csv"))?)?;
            out.json(
                "shadow.json",
                &json!({
                    "delta": delta,
                    "radius": radius,
                    "period": sh.period,
                    "checked": sh.deviations.len(),
                    "max_deviation": sh.max_deviation,
                    "sqrt_delta": delta.sqrt(),
                    "bound": sh.bound,
                    "violations": sh.deviations.iter().filter(|(_, d)| *d > sh.bound).count(),
                }),
            )?;
        }
        Command::Morse => {
            let alphabet = c.boxset("alphabet")?;
            let letters = alphabet.lattice(c.usize_or("alphabet.levels", 5)?.max(1));
            let a = Expr::parse(c.str_or("morse.a", "x1"), alphabet.dim())
                .map_err(|e| Error::Config(format!("`morse.a`: {e}")))?;
            let mut cfg = MorseConfig::new(letters, c.positive_f64_or("morse.eps", 0.2)?);
            if c.get("morse.eps_ladder").is_some() {
                cfg.eps_ladder = c.f64_list("morse.eps_ladder")?;
            }
            cfg.max_period = c.usize_or("morse.max_period", cfg.max_period)?.max(1);
            cfg.samples_per_level = c.usize_or("morse.samples", cfg.samples_per_level)?;
            cfg.seed = seed;
            // evaluation failures surface as NaN and are reported below
            let eval = |w: &SeqWindow| a.eval(w.get(0)).unwrap_or(f64::NAN);
            let rep = morse_spectrum(&eval, &cfg)?;
            if rep.levels.iter().any(|l| !l.lo.is_finite() || !l.hi.is_finite()) {
                return Err(Error::Domain("cocycle evaluation failed on the alphabet".into()));
            }
            let mut w = create(&out.path("morse.csv"))?;
            use std::io::Write;
            writeln!(w, "eps,lo,hi,samples")?;
            for l in &rep.levels {
                writeln!(w, "{},{},{},{}", l.eps, l.lo, l.hi, l.samples)?;
            }
            drop(w);
            out.json("morse.json", &json!({ "nested": rep.is_nested(), "report": rep }))?;
        }
        Command::Volcheck => {
            let provider = EstimatedSplitting { options: rc.splitting_options()? };
            let defaults = VolumeOptions::default();
            let sampling = match c.str_or("volume.sampling", "box") {
                "box" => Sampling::LinearizedBox,
                "ball" => Sampling::Ball,
                other => return Err(Error::Config(format!("`volume.sampling`: unknown `{other}`"))),
            };
            let opts = VolumeOptions {
                samples: c.usize_or("volume.samples", defaults.samples)?.max(1),
                seed,
                threshold: c.positive_f64_or("volume.threshold", defaults.threshold)?,
                sampling,
                probe_horizon: c.positive_f64_or("volume.probe_horizon", defaults.probe_horizon)?,
                min_rate: c.positive_f64_or("volume.min_rate", defaults.min_rate)?,
                flow: rc.flow()?,
            };
            let taus = c.f64_list_or("volume.taus", &(1..=10).map(f64::from).collect::<Vec<_>>())?;
            let series = volume_lemma_check(
                spec(),
                &provider,
                &rc.control()?,
                &rc.x0()?,
                c.positive_f64("eps")?,
                &taus,
                &opts,
            )?;
            series.write_csv(create(&out.path("volume.csv"))?)?;
            let summary: Value = json!({
                "eps": series.eps,
                "ratio": if series.ratio.is_finite() { json!(series.ratio) } else { json!("inf") },
                "threshold": series.threshold,
                "drift": series.drift,
                "hyperbolic": series.hyperbolic,
                "log_slope": series.log_slope,
                "note": series.note,
                "series": series,
            });
            out.json("volume.json", &summary)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names() {
        assert_eq!(kind_name(&Error::BlowUp { t: 1.0, norm: 2.0 }), "BlowUp");
        assert_eq!(kind_name(&Error::Config("x".into())), "Config");
    }

    #[test]
    fn hashes_are_hex() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}

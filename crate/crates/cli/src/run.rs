//! Subcommand execution: artifacts, manifest and threshold checks.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, Mode};
use crate::experiments::{self, IdentityRun};
use crate::io::{num, write_boundary, write_field, write_table};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Forward,
    Dn,
    VerifyIdentities,
    MeasureData,
    Reconstruct,
    RungeDemo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Dn => "dn",
            Command::VerifyIdentities => "verify-identities",
            Command::MeasureData => "measure-data",
            Command::Reconstruct => "reconstruct",
            Command::RungeDemo => "runge-demo",
        }
    }
}

/// One threshold comparison evaluated by `--check`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub artifacts: Vec<PathBuf>,
    pub checks: Vec<Check>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Worker threads: `POINTDN_THREADS`, then the config, then all cores.
pub fn thread_count(cfg: &ExperimentConfig) -> Result<usize, CliError> {
    if let Ok(v) = std::env::var("POINTDN_THREADS") {
        return v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| CliError::Config(format!("POINTDN_THREADS = `{v}` is not a positive integer")));
    }
    Ok(cfg.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

struct Timings(Vec<(String, f64)>);

impl Timings {
    fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.0.push((label.to_string(), t.elapsed().as_secs_f64()));
        out
    }
}

/// Runs one experiment, writing artifacts and `manifest.json` into
/// `cfg.output_dir`. Threshold checks are always evaluated and recorded; the
/// caller decides whether they determine the exit status.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let threads = thread_count(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;

    let started = Instant::now();
    let mut timings = Timings(Vec::new());
    let outcome = pool.install(|| match command {
        Command::Forward => forward(cfg, &dir, &mut timings),
        Command::Dn => dn(cfg, &dir, &mut timings),
        Command::VerifyIdentities => verify_identities(cfg, &dir, &mut timings),
        Command::MeasureData => measure_data(cfg, &dir, &mut timings),
        Command::Reconstruct => reconstruct(cfg, &dir, &mut timings),
        Command::RungeDemo => runge_demo(cfg, &dir, &mut timings),
    })?;

    let manifest = json!({
        "command": command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": pointdn::VERSION,
        "seed": cfg.seed,
        "threads": threads,
        "config": cfg.to_json(),
        "artifacts": outcome.artifacts.iter().map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned())).collect::<Vec<_>>(),
        "checks": outcome.checks,
        "timings_s": timings.0.iter().map(|(k, v)| json!({"stage": k, "seconds": v})).collect::<Vec<_>>(),
        "total_s": started.elapsed().as_secs_f64(),
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(outcome)
}

/// Machine-readable failure record, written next to the would-be artifacts.
pub fn write_error_record(dir: &Path, command: Command, err: &CliError) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let record = json!({
        "command": command.name(),
        "kind": err.kind(),
        "exit_code": err.exit_code(),
        "message": err.to_string(),
    });
    write_json(&dir.join("error.json"), &record)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn forward(cfg: &ExperimentConfig, dir: &Path, t: &mut Timings) -> Result<RunOutcome, CliError> {
    let out = t.time("solve", || experiments::forward(cfg))?;
    let g = &out.grid;
    let paths = [dir.join("u.csv"), dir.join("flux.csv"), dir.join("solver.csv")];
    write_field(&paths[0], g, &out.solution.u)?;
    write_boundary(&paths[1], g, out.flux.values())?;
    write_table(
        &paths[2],
        &["iterations", "residual"],
        &[vec![out.solution.iterations.to_string(), num(out.solution.residual)]],
    )?;
    Ok(RunOutcome { artifacts: paths.to_vec(), checks: vec![] })
}

fn dn(cfg: &ExperimentConfig, dir: &Path, t: &mut Timings) -> Result<RunOutcome, CliError> {
    let out = t.time("dn", || experiments::dn(cfg))?;
    let (g, rec) = (&out.grid, &out.record);
    let paths = [dir.join("dn.csv"), dir.join("pairing.csv")];
    let rows: Vec<Vec<String>> = (0..g.boundary_count())
        .map(|b| vec![num(g.boundary_param(b)), num(rec.flux.values()[b]), num(rec.nonlinear_flux.values()[b])])
        .collect();
    write_table(&paths[0], &["s", "flux", "nonlinear_flux"], &rows)?;
    write_table(
        &paths[1],
        &["pairing", "nonlinear_pairing", "iterations"],
        &[vec![
            num(rec.pairing.unwrap_or(f64::NAN)),
            num(rec.nonlinear_pairing.unwrap_or(f64::NAN)),
            rec.iterations.to_string(),
        ]],
    )?;
    Ok(RunOutcome { artifacts: paths.to_vec(), checks: vec![] })
}

/// Absolute size below which an identity value counts as exactly zero.
const ZERO_VALUE: f64 = 1e-14;

pub fn identity_checks(cfg: &ExperimentConfig, runs: &[IdentityRun]) -> Vec<Check> {
    let mut checks = Vec::new();
    let vanishing = runs.iter().all(|r| r.values.cascade.abs() <= ZERO_VALUE);
    for r in runs {
        let v = &r.values;
        if vanishing {
            let worst = v.mixed.abs().max(v.cascade.abs()).max(v.volume.abs());
            checks.push(Check::new(format!("n={} all methods vanish", r.n), worst <= ZERO_VALUE, format!("max |value| = {worst:.3e}")));
        } else {
            let gap = v.mixed_gap();
            checks.push(Check::new(
                format!("n={} mixed vs cascade", r.n),
                gap <= cfg.check.identity_gap,
                format!("relative gap {gap:.3e} (limit {:.1e})", cfg.check.identity_gap),
            ));
        }
    }
    if !vanishing {
        let [lo, hi] = cfg.check.ratio_range;
        for (w, ratio) in runs.windows(2).zip(experiments::identity_ratios(runs)) {
            checks.push(Check::new(
                format!("n={}->{} cascade vs volume refinement", w[0].n, w[1].n),
                (lo..=hi).contains(&ratio),
                format!("ratio {ratio:.3} (range {lo}-{hi})"),
            ));
        }
    }
    checks
}

fn verify_identities(cfg: &ExperimentConfig, dir: &Path, t: &mut Timings) -> Result<RunOutcome, CliError> {
    let runs = t.time("identities", || experiments::verify_identities(cfg))?;
    let mut rows = Vec::new();
    for r in &runs {
        for (method, value) in [("mixed", r.values.mixed), ("cascade", r.values.cascade), ("volume", r.values.volume)] {
            rows.push(vec![method.to_string(), cfg.m.to_string(), r.n.to_string(), num(r.eps), num(value)]);
        }
    }
    let path = dir.join("identities.csv");
    write_table(&path, &["method", "m", "n", "eps", "value"], &rows)?;
    Ok(RunOutcome { artifacts: vec![path], checks: identity_checks(cfg, &runs) })
}

pub fn measure_data_checks(cfg: &ExperimentConfig, run: &experiments::MeasureDataRun) -> Vec<Check> {
    let mut checks = Vec::new();
    let [lo, hi] = cfg.check.ratio_range;
    for (w, ratio) in run.duality.windows(2).zip(run.duality_ratios()) {
        checks.push(Check::new(
            format!("duality n={}->{}", w[0].0, w[1].0),
            (lo..=hi).contains(&ratio),
            format!("ratio {ratio:.3} (range {lo}-{hi})"),
        ));
    }
    for &r in &cfg.measure_data.r_values {
        let norms = run.norms(r);
        let (first, last) = (norms[0], norms[norms.len() - 1]);
        if r < 2.0 {
            let max = norms.iter().cloned().fold(f64::MIN, f64::max);
            let min = norms.iter().cloned().fold(f64::MAX, f64::min);
            let variation = max / min - 1.0;
            checks.push(Check::new(
                format!("L^{r} bounded"),
                variation < cfg.check.lr_variation,
                format!("variation {:.1}% (limit {:.0}%)", 100.0 * variation, 100.0 * cfg.check.lr_variation),
            ));
        } else {
            let monotone = norms.windows(2).all(|w| w[1] > w[0]);
            let growth = last / first;
            checks.push(Check::new(
                format!("L^{r} growing"),
                monotone && growth > cfg.check.lr_growth,
                format!("monotone {monotone}, growth {growth:.3}x (need > {}x)", cfg.check.lr_growth),
            ));
        }
    }
    checks
}

fn measure_data(cfg: &ExperimentConfig, dir: &Path, t: &mut Timings) -> Result<RunOutcome, CliError> {
    let run = t.time("measure-data", || experiments::measure_data(cfg))?;
    let paths = [dir.join("duality.csv"), dir.join("lr.csv")];
    let rows: Vec<Vec<String>> = run.duality.iter().map(|&(n, r)| vec![n.to_string(), num(r)]).collect();
    write_table(&paths[0], &["n", "residual"], &rows)?;
    let rows: Vec<Vec<String>> = run.lr.iter().map(|&(s, r, v)| vec![num(s), num(r), num(v)]).collect();
    write_table(&paths[1], &["sigma", "r", "norm"], &rows)?;
    Ok(RunOutcome { artifacts: paths.to_vec(), checks: measure_data_checks(cfg, &run) })
}

fn reconstruct(cfg: &ExperimentConfig, dir: &Path, t: &mut Timings) -> Result<RunOutcome, CliError> {
    let mut data = t.time("simulate", || experiments::reconstruction_data(cfg))?;
    experiments::add_noise(&mut data, cfg.reconstruction.noise_rel, cfg.seed);
    let run = t.time("invert", || experiments::invert(cfg, data))?;
    let g = &run.grid;
    let paths = [dir.join("q_true.csv"), dir.join("q_rec.csv"), dir.join("metrics.csv"), dir.join("data.csv")];
    write_field(&paths[0], g, &run.q_true)?;
    write_field(&paths[1], g, &run.result.q_rec)?;
    let res = &run.result;
    write_table(
        &paths[2],
        &["residual", "rel_l2_error", "lambda", "masked_fraction"],
        &[vec![num(res.residual), num(run.rel_l2_error), num(res.lambda), num(res.masked_fraction)]],
    )?;
    let rows: Vec<Vec<String>> = run
        .data
        .labels
        .iter()
        .zip(&run.data.values)
        .map(|(l, v)| vec![l[0].to_string(), l[1].to_string(), num(v.re), num(v.im)])
        .collect();
    write_table(&paths[3], &["a", "b", "re", "im"], &rows)?;

    let limit = match cfg.reconstruction.mode {
        Mode::Fourier => cfg.check.fourier_error,
        Mode::Moment => cfg.check.moment_error,
    };
    let check = Check::new(
        "reconstruction error",
        run.rel_l2_error <= limit,
        format!("relative L2 error {:.4} (limit {limit})", run.rel_l2_error),
    );
    Ok(RunOutcome { artifacts: paths.to_vec(), checks: vec![check] })
}

pub fn runge_checks(cfg: &ExperimentConfig, run: &experiments::RungeRun) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut worst_final: f64 = 0.0;
    for (k, rows) in run.targets.iter().enumerate() {
        let decreasing = rows.windows(2).all(|w| w[1].residual < w[0].residual);
        let residuals: Vec<String> = rows.iter().map(|r| format!("{:.2e}", r.residual)).collect();
        checks.push(Check::new(format!("target {k} decreasing"), decreasing, residuals.join(" > ")));
        if let Some(last) = rows.last() {
            worst_final = worst_final.max(last.residual);
        }
    }
    if let Some(control) = run.control.last() {
        let factor = control.residual / worst_final;
        checks.push(Check::new(
            "negative control",
            factor >= cfg.check.runge_control_factor,
            format!(
                "control {:.3e} vs worst target {:.3e} at {} sources ({factor:.2e}x, need {}x)",
                control.residual, worst_final, control.n_sources, cfg.check.runge_control_factor
            ),
        ));
    }
    checks
}

fn runge_demo(cfg: &ExperimentConfig, dir: &Path, t: &mut Timings) -> Result<RunOutcome, CliError> {
    let run = t.time("runge", || experiments::runge(cfg))?;
    let write = |path: &PathBuf, rows: &[experiments::RungeRow]| {
        let rows: Vec<Vec<String>> =
            rows.iter().map(|r| vec![r.n_sources.to_string(), num(r.residual), num(r.condition)]).collect();
        write_table(path, &["n_sources", "residual", "condition"], &rows)
    };
    let mut artifacts = Vec::new();
    for (k, rows) in run.targets.iter().enumerate() {
        let path = dir.join(format!("runge_target_{k}.csv"));
        write(&path, rows)?;
        artifacts.push(path);
    }
    let path = dir.join("runge_control.csv");
    write(&path, &run.control)?;
    artifacts.push(path);
    Ok(RunOutcome { artifacts, checks: runge_checks(cfg, &run) })
}

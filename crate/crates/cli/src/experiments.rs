//! Experiment pipelines shared by the subcommands and the acceptance suite.
//! Each one takes a validated config and returns plain data; writing
//! artifacts is left to [`crate::run`].

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use pointdn::grid::{lr_norm, normal_derivative, BoundaryData, Grid, ScalarField};
use pointdn::linear_solve::solve_dirichlet;
use pointdn::linearization::{evaluate_identities, IdentityValues, LinearizationPlan};
use pointdn::measure::{duality_residual, mollified_point_mass, solve_measure_dirichlet};
use pointdn::reconstruct::{
    assemble_moment_system, basis_pairs, bump_basis, recover_q_fourier, recover_q_moment, simulate_fourier_data,
    simulate_moment_data, weight_field, Evaluation, MeasurementParams, MeasurementSet, ReconstructionResult,
};
use pointdn::runge::{runge_fit, NestedDomains};
use pointdn::semilinear::{dn_map, solve_semilinear, DnRecord, SemilinearProblem, SemilinearSolution};

use crate::config::{arc, EvaluationConfig, ExperimentConfig, Mode};
use crate::CliError;

/// Independent random streams derived from the config seed.
pub mod stream {
    pub const NOISE: u64 = 1;
    pub const RUNGE_TARGETS: u64 = 2;
}

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn grid(n: usize) -> Result<Grid, CliError> {
    Ok(Grid::new(n)?)
}

pub struct ForwardRun {
    pub grid: Grid,
    pub solution: SemilinearSolution,
    pub flux: BoundaryData,
}

pub fn forward(cfg: &ExperimentConfig) -> Result<ForwardRun, CliError> {
    let g = grid(cfg.n)?;
    let problem = SemilinearProblem::new(&g, cfg.q.field(&g)?, cfg.m, cfg.f.data(&g)?, cfg.delta)?;
    let solution = solve_semilinear(&problem, &cfg.newton.params())?;
    let flux = normal_derivative(&g, &solution.u)?;
    Ok(ForwardRun { grid: g, solution, flux })
}

pub struct DnRun {
    pub grid: Grid,
    pub record: DnRecord,
}

pub fn dn(cfg: &ExperimentConfig) -> Result<DnRun, CliError> {
    let g = grid(cfg.n)?;
    let problem = SemilinearProblem::new(&g, cfg.q.field(&g)?, cfg.m, cfg.f.data(&g)?, cfg.delta)?;
    let mu = cfg.measure.measure(&g)?;
    let record = dn_map(&problem, &cfg.newton.params(), Some(&mu))?;
    Ok(DnRun { grid: g, record })
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityRun {
    pub n: usize,
    /// `ε_1 ‖h_1‖_∞`.
    pub eps: f64,
    pub values: IdentityValues,
}

/// Three-way identity check on every configured grid size.
pub fn verify_identities(cfg: &ExperimentConfig) -> Result<Vec<IdentityRun>, CliError> {
    let lin = &cfg.linearization;
    let m = cfg.m as usize;
    lin.n_values
        .iter()
        .map(|&n| {
            let g = grid(n)?;
            let directions = lin.directions(&g, m);
            let steps = directions.iter().map(|h| lin.eps / h.max_abs()).collect();
            let plan = LinearizationPlan::new(&g, cfg.q.field(&g)?, directions, cfg.measure.measure(&g)?)?
                .with_delta(cfg.delta)?
                .with_steps(steps)?
                .with_richardson(lin.richardson)
                .with_newton(cfg.newton.params());
            let values = evaluate_identities(&plan)?;
            Ok(IdentityRun { n, eps: lin.eps, values })
        })
        .collect()
}

/// `|cascade - volume|` ratios between consecutive grids.
pub fn identity_ratios(runs: &[IdentityRun]) -> Vec<f64> {
    runs.windows(2)
        .map(|w| (w[0].values.cascade - w[0].values.volume).abs() / (w[1].values.cascade - w[1].values.volume).abs())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureDataRun {
    /// `(n, residual)`.
    pub duality: Vec<(usize, f64)>,
    /// `(σ, r, ‖Ψ_σ‖_{L^r})`.
    pub lr: Vec<(f64, f64, f64)>,
}

pub fn measure_data(cfg: &ExperimentConfig) -> Result<MeasureDataRun, CliError> {
    let md = &cfg.measure_data;
    let duality = md
        .n_values
        .iter()
        .map(|&n| {
            let g = grid(n)?;
            let f = md.source.field(&g)?;
            let w = solve_dirichlet(&g, &f, &BoundaryData::zeros(&g), None)?;
            let mu = cfg.measure.measure(&g)?;
            let psi = solve_measure_dirichlet(&g, &mu)?;
            Ok((n, duality_residual(&g, &psi, &mu, &w)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let g = grid(md.sweep_n)?;
    let mut lr = Vec::new();
    for &sigma in &md.sigmas {
        let mu = mollified_point_mass(&g, (md.x0[0], md.x0[1]), sigma)?;
        let psi = solve_measure_dirichlet(&g, &mu)?;
        for &r in &md.r_values {
            lr.push((sigma, r, lr_norm(&g, &psi, r)?));
        }
    }
    Ok(MeasureDataRun { duality, lr })
}

impl MeasureDataRun {
    pub fn duality_ratios(&self) -> Vec<f64> {
        self.duality.windows(2).map(|w| w[0].1 / w[1].1).collect()
    }

    /// Norms for one exponent in sweep order.
    pub fn norms(&self, r: f64) -> Vec<f64> {
        self.lr.iter().filter(|t| t.1 == r).map(|t| t.2).collect()
    }
}

pub struct ReconstructionRun {
    pub grid: Grid,
    pub q_true: ScalarField,
    pub data: MeasurementSet,
    pub result: ReconstructionResult,
    pub rel_l2_error: f64,
}

/// Simulated measurements on the data grid, before noise.
pub fn reconstruction_data(cfg: &ExperimentConfig) -> Result<MeasurementSet, CliError> {
    let r = &cfg.reconstruction;
    let gd = grid(r.n_data)?;
    let q = cfg.q.field(&gd)?;
    let gamma = arc(cfg.gamma)?;
    let m = cfg.m as usize;
    let aux = r.aux(gamma, m);
    let params = MeasurementParams {
        evaluation: match r.evaluation {
            EvaluationConfig::Mixed => Evaluation::MixedDifference,
            EvaluationConfig::Cascade => Evaluation::Cascade,
        },
        step: cfg.linearization.eps,
        richardson: r.richardson,
        delta: cfg.delta,
        newton: cfg.newton.params(),
    };
    let measure = cfg.measure.spec()?;
    Ok(match r.mode {
        Mode::Fourier => simulate_fourier_data(&gd, &q, m, r.kmax, &aux, measure, &params)?,
        Mode::Moment => {
            let basis = bump_basis(gamma, r.basis_count, r.basis_half_width)?;
            let pairs = basis_pairs(r.basis_count, r.pairs);
            simulate_moment_data(&gd, &q, m, &basis, &pairs, &aux, measure, &params)?
        }
    })
}

/// Adds `noise_rel · rms(data)` Gaussian noise per component.
pub fn add_noise(set: &mut MeasurementSet, noise_rel: f64, seed: u64) {
    if noise_rel == 0.0 || set.is_empty() {
        return;
    }
    let rms = (set.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / set.len() as f64).sqrt();
    let complex = set.values.iter().any(|v| v.im != 0.0);
    let mut r = rng(seed, stream::NOISE);
    for v in &mut set.values {
        let re: f64 = r.sample(StandardNormal);
        let im: f64 = if complex { r.sample(StandardNormal) } else { 0.0 };
        let s = if complex { noise_rel * rms / 2f64.sqrt() } else { noise_rel * rms };
        *v += Complex64::new(re, im) * s;
    }
}

/// Inverts (possibly noisy) data on the reconstruction grid.
pub fn invert(cfg: &ExperimentConfig, data: MeasurementSet) -> Result<ReconstructionRun, CliError> {
    let r = &cfg.reconstruction;
    let g = grid(r.n_recon)?;
    let q_true = cfg.q.field(&g)?;
    let result = match r.mode {
        Mode::Fourier => {
            let aux: Vec<BoundaryData> = data.aux.iter().map(|b| b.on(&g)).collect();
            let phi = weight_field(&g, &aux, &data.measure.on(&g)?)?;
            recover_q_fourier(&g, &data, &phi, r.fourier_basis(), r.basis_kmax.unwrap_or(r.kmax / 2.0))?
        }
        Mode::Moment => {
            let system = assemble_moment_system(&g, &data)?;
            let lambda = if r.lcurve { None } else { r.lambda };
            recover_q_moment(&g, &system, lambda, r.regularizer())?
        }
    };
    let rel_l2_error = result.error_against(&g, &q_true)?;
    Ok(ReconstructionRun { grid: g, q_true, data, result, rel_l2_error })
}

pub fn reconstruct(cfg: &ExperimentConfig) -> Result<ReconstructionRun, CliError> {
    let mut data = reconstruction_data(cfg)?;
    add_noise(&mut data, cfg.reconstruction.noise_rel, cfg.seed);
    invert(cfg, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RungeRow {
    pub n_sources: usize,
    pub residual: f64,
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RungeRun {
    /// Random admissible targets.
    pub targets: Vec<Vec<RungeRow>>,
    /// Constant target on `Ω_1`, nonzero on the shared sides.
    pub control: Vec<RungeRow>,
}

/// Sine coefficients `N(0,1)/k²` of the random targets.
pub fn runge_coefficients(seed: u64, targets: usize, modes: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed, stream::RUNGE_TARGETS);
    (0..targets)
        .map(|_| {
            (1..=modes)
                .map(|k| {
                    let z: f64 = r.sample(StandardNormal);
                    z / (k * k) as f64
                })
                .collect()
        })
        .collect()
}

pub fn runge(cfg: &ExperimentConfig) -> Result<RungeRun, CliError> {
    let rc = &cfg.runge;
    let g = grid(rc.n)?;
    let dom = NestedDomains::new(&g, rc.inner_height, rc.source_height, rc.candidates)?;
    let sweep = |target: &ScalarField| -> Result<Vec<RungeRow>, CliError> {
        rc.counts
            .iter()
            .map(|&count| {
                let fit = runge_fit(&dom, target, &dom.source_subset(count, 0)?)?;
                Ok(RungeRow { n_sources: count, residual: fit.residual, condition: fit.condition })
            })
            .collect()
    };
    let targets = runge_coefficients(cfg.seed, rc.targets, rc.modes)
        .iter()
        .map(|c| sweep(&dom.separable_target(c)))
        .collect::<Result<Vec<_>, _>>()?;
    let control = sweep(&dom.constant_target(1.0))?;
    Ok(RungeRun { targets, control })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| rng(7, 1).random()).collect();
        let b: Vec<u64> = (0..4).map(|_| rng(7, 1).random()).collect();
        assert_eq!(a, b);
        assert_ne!(rng(7, 1).random::<u64>(), rng(7, 2).random::<u64>());
        assert_ne!(rng(7, 1).random::<u64>(), rng(8, 1).random::<u64>());
    }

    #[test]
    fn runge_coefficients_decay() {
        let c = runge_coefficients(3, 2, 6);
        assert_eq!(c.len(), 2);
        assert!(c[0] != c[1]);
        assert_eq!(c, runge_coefficients(3, 2, 6));
    }

    #[test]
    fn noise_has_requested_size() {
        let mut cfg = ExperimentConfig::default();
        cfg.reconstruction.noise_rel = 0.1;
        let values: Vec<Complex64> = (0..4000).map(|k| Complex64::new((k as f64).sin(), 0.0)).collect();
        let set = MeasurementSet {
            mode: pointdn::reconstruct::MeasurementMode::Fourier { kmax: 1.0, center: (0.5, 0.5) },
            m: 2,
            aux: vec![],
            measure: pointdn::reconstruct::MeasureSpec::Uniform { density: 0.25 },
            labels: vec![[0, 0]; values.len()],
            values: values.clone(),
            provenance: pointdn::reconstruct::Provenance {
                n_data: 11,
                evaluation: Evaluation::Cascade,
                step: 0.01,
                richardson: 0,
            },
        };
        let mut noisy = set.clone();
        add_noise(&mut noisy, 0.1, 5);
        let rms = (values.iter().map(|v| v.norm_sqr()).sum::<f64>() / 4000.0).sqrt();
        let dev = (noisy.values.iter().zip(&values).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / 4000.0).sqrt();
        assert!((dev / rms - 0.1).abs() < 0.005, "{}", dev / rms);
        assert!(noisy.values.iter().all(|v| v.im == 0.0));
    }
}

//! Experiment configuration: a JSON document with defaults for every key,
//! overridable from the command line with dotted `key=value` pairs.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use pointdn::grid::{bump_profile, BoundaryArc, BoundaryData, Grid, ScalarField};
use pointdn::measure::BoundaryMeasure;
use pointdn::reconstruct::{BumpSpec, FourierBasis, MeasureSpec, Regularizer, DEFAULT_LENGTH};

use crate::io;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Grid size for single-grid commands.
    pub n: usize,
    pub m: u32,
    pub q: QSpec,
    /// Dirichlet datum for `forward` and `dn`.
    pub f: BoundarySpec,
    /// `Γ` as `[s_start, s_end]` in perimeter arclength.
    pub gamma: [f64; 2],
    pub measure: MeasureConfig,
    pub delta: f64,
    pub newton: NewtonConfig,
    pub linearization: LinearizationConfig,
    pub measure_data: MeasureDataConfig,
    pub reconstruction: ReconstructionConfig,
    pub runge: RungeConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; `POINTDN_THREADS` takes precedence, default all cores.
    pub threads: Option<usize>,
    /// Acceptance thresholds used by `--check`.
    pub check: CheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 81,
            m: 2,
            q: QSpec::Constant { value: 1.0 },
            f: BoundarySpec::Bump { gamma: [0.0, 4.0], center: 0.5, half_width: 0.6, height: 0.02 },
            gamma: [0.0, 1.0],
            measure: MeasureConfig::Point { x0: [1.0, 0.5], sigma: 0.1 },
            delta: pointdn::semilinear::DEFAULT_DELTA,
            newton: NewtonConfig::default(),
            linearization: LinearizationConfig::default(),
            measure_data: MeasureDataConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            runge: RungeConfig::default(),
            output_dir: PathBuf::from("pointdn-out"),
            seed: 0,
            threads: None,
            check: CheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum QSpec {
    Constant { value: f64 },
    /// Sum of radial bumps `height · exp(1 - 1/(1 - r²/radius²))`.
    Bumps { bumps: Vec<QBump> },
    /// `offset + amplitude · cos(πa x) cos(πb y)`.
    Cosine { a: u32, b: u32, amplitude: f64, offset: f64 },
    /// `x,y,value` rows on the grid in use.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QBump {
    pub center: [f64; 2],
    pub radius: f64,
    pub height: f64,
}

impl QSpec {
    pub fn field(&self, grid: &Grid) -> Result<ScalarField, CliError> {
        Ok(match self {
            QSpec::Constant { value } => ScalarField::constant(grid, *value),
            QSpec::Bumps { bumps } => ScalarField::from_fn(grid, |x, y| {
                bumps
                    .iter()
                    .map(|b| {
                        let r = ((x - b.center[0]).powi(2) + (y - b.center[1]).powi(2)).sqrt();
                        b.height * bump_profile(r / b.radius)
                    })
                    .sum()
            }),
            QSpec::Cosine { a, b, amplitude, offset } => ScalarField::from_fn(grid, |x, y| {
                offset + amplitude * (PI * *a as f64 * x).cos() * (PI * *b as f64 * y).cos()
            }),
            QSpec::Csv { path } => io::read_field(path, grid)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    Zero,
    /// Bump `height · exp(1 - 1/(1 - t²))`, `t = (s - center)/half_width`,
    /// restricted to the arc `gamma`.
    Bump { gamma: [f64; 2], center: f64, half_width: f64, height: f64 },
    /// `s,value` rows on the grid in use.
    Csv { path: PathBuf },
}

impl BoundarySpec {
    pub fn data(&self, grid: &Grid) -> Result<BoundaryData, CliError> {
        Ok(match self {
            BoundarySpec::Zero => BoundaryData::zeros(grid),
            BoundarySpec::Bump { gamma, center, half_width, height } => {
                BoundaryData::bump(grid, &arc(*gamma)?, *center, *half_width, *height)
            }
            BoundarySpec::Csv { path } => {
                let values = io::read_boundary(path, grid)?;
                BoundaryData::full(grid, values)?
            }
        })
    }
}

pub fn arc(gamma: [f64; 2]) -> Result<BoundaryArc, CliError> {
    if (gamma[1] - gamma[0] - pointdn::grid::PERIMETER).abs() < 1e-12 && gamma[0] == 0.0 {
        return Ok(BoundaryArc::full());
    }
    BoundaryArc::new(gamma[0], gamma[1]).map_err(|e| CliError::Config(format!("gamma: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    Point { x0: [f64; 2], sigma: f64 },
    Uniform { density: f64 },
    /// `s,value` density rows on the grid in use.
    Density { values_csv: PathBuf },
}

impl MeasureConfig {
    pub fn measure(&self, grid: &Grid) -> Result<BoundaryMeasure, CliError> {
        match self {
            MeasureConfig::Density { values_csv } => {
                let values = io::read_boundary(values_csv, grid)?;
                Ok(BoundaryMeasure::from_density(grid, values)?)
            }
            other => Ok(other.spec()?.on(grid)?),
        }
    }

    /// Grid-independent form, needed when data and reconstruction grids differ.
    pub fn spec(&self) -> Result<MeasureSpec, CliError> {
        match *self {
            MeasureConfig::Point { x0, sigma } => Ok(MeasureSpec::Point { x0: (x0[0], x0[1]), sigma }),
            MeasureConfig::Uniform { density } => Ok(MeasureSpec::Uniform { density }),
            MeasureConfig::Density { .. } => Err(CliError::Config(
                "a density measure is tied to one grid; use a point or uniform measure here".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    pub max_iter: usize,
    pub residual_tol: f64,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        let p = pointdn::semilinear::NewtonParams::default();
        Self { max_iter: p.max_iter, residual_tol: p.residual_tol, max_halvings: p.max_halvings }
    }
}

impl NewtonConfig {
    pub fn params(&self) -> pointdn::semilinear::NewtonParams {
        pointdn::semilinear::NewtonParams {
            max_iter: self.max_iter,
            residual_tol: self.residual_tol,
            max_halvings: self.max_halvings,
        }
    }
}

/// Bump directions `h_j` with centres `first_center + j·spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearizationConfig {
    /// `ε_j ‖h_j‖_∞`.
    pub eps: f64,
    pub richardson: usize,
    pub first_center: f64,
    pub spacing: f64,
    pub half_width: f64,
    /// Grid sizes for `verify-identities`.
    pub n_values: Vec<usize>,
}

impl Default for LinearizationConfig {
    fn default() -> Self {
        Self {
            eps: pointdn::linearization::DEFAULT_STEP,
            richardson: 1,
            first_center: 0.5,
            spacing: 0.6,
            half_width: 0.6,
            n_values: vec![41, 81],
        }
    }
}

impl LinearizationConfig {
    pub fn directions(&self, grid: &Grid, m: usize) -> Vec<BoundaryData> {
        (0..m)
            .map(|j| {
                let c = (self.first_center + self.spacing * j as f64).rem_euclid(pointdn::grid::PERIMETER);
                BoundaryData::bump(grid, &BoundaryArc::full(), c, self.half_width, 1.0)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureDataConfig {
    /// Grid sizes of the duality-residual refinement.
    pub n_values: Vec<usize>,
    /// Source `F` of the test function `w = solve_dirichlet(F, 0)`.
    pub source: QSpec,
    /// Point-mass location of the `L^r` sweep; the duality study uses `measure`.
    pub x0: [f64; 2],
    /// Grid of the `L^r` sweep.
    pub sweep_n: usize,
    pub sigmas: Vec<f64>,
    pub r_values: Vec<f64>,
}

impl Default for MeasureDataConfig {
    fn default() -> Self {
        Self {
            n_values: vec![41, 81, 161],
            source: QSpec::Constant { value: 1.0 },
            x0: [1.0, 0.5],
            sweep_n: 161,
            sigmas: vec![0.2, 0.1, 0.05, 0.025],
            r_values: vec![1.8, 2.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fourier,
    Moment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationConfig {
    Mixed,
    Cascade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerConfig {
    Gradient,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FourierBasisConfig {
    Weighted,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    pub mode: Mode,
    pub n_data: usize,
    pub n_recon: usize,
    /// Lattice radius `|k| <= kmax`.
    pub kmax: f64,
    /// Radius of the cosine basis; default `kmax / 2`.
    pub basis_kmax: Option<f64>,
    pub fourier_basis: FourierBasisConfig,
    pub basis_count: usize,
    pub basis_half_width: f64,
    pub pairs: usize,
    /// Fixed `λ`; when absent (or `lcurve`), the L-curve corner is used.
    pub lambda: Option<f64>,
    pub lcurve: bool,
    pub regularizer: RegularizerConfig,
    pub length: f64,
    pub noise_rel: f64,
    pub evaluation: EvaluationConfig,
    /// Richardson levels of the simulated measurements.
    pub richardson: usize,
    /// Auxiliary directions `h_3..h_m`: bumps of height 1 centred in `Γ`.
    pub aux_half_width: Option<f64>,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Moment,
            n_data: 161,
            n_recon: 81,
            kmax: 8.0 * PI,
            basis_kmax: None,
            fourier_basis: FourierBasisConfig::Weighted,
            basis_count: 20,
            basis_half_width: 0.1,
            pairs: 200,
            lambda: None,
            lcurve: true,
            regularizer: RegularizerConfig::Gradient,
            length: DEFAULT_LENGTH,
            noise_rel: 0.0,
            evaluation: EvaluationConfig::Mixed,
            richardson: 0,
            aux_half_width: None,
        }
    }
}

impl ReconstructionConfig {
    pub fn regularizer(&self) -> Regularizer {
        match self.regularizer {
            RegularizerConfig::Gradient => Regularizer::Gradient { length: self.length },
            RegularizerConfig::Identity => Regularizer::Identity,
        }
    }

    pub fn fourier_basis(&self) -> FourierBasis {
        match self.fourier_basis {
            FourierBasisConfig::Weighted => FourierBasis::Weighted,
            FourierBasisConfig::Plain => FourierBasis::Plain,
        }
    }

    /// `h_3 = … = h_m`: one bump of height 1 centred in `gamma`.
    pub fn aux(&self, gamma: BoundaryArc, m: usize) -> Vec<BumpSpec> {
        let mut bump = BumpSpec::centered(gamma);
        if let Some(w) = self.aux_half_width {
            bump.half_width = w;
        }
        vec![bump; m.saturating_sub(2)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RungeConfig {
    pub n: usize,
    pub inner_height: f64,
    pub source_height: f64,
    pub candidates: usize,
    pub counts: Vec<usize>,
    /// Random admissible targets.
    pub targets: usize,
    /// Sine modes per target, coefficients `N(0,1)/k²`.
    pub modes: usize,
}

impl Default for RungeConfig {
    fn default() -> Self {
        Self {
            n: 129,
            inner_height: 0.75,
            source_height: 0.875,
            candidates: 64,
            counts: vec![8, 16, 32, 64],
            targets: 5,
            modes: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub identity_gap: f64,
    pub ratio_range: [f64; 2],
    /// `max/min - 1` of `‖Ψ_σ‖_{L^r}` over the sweep, `r < 2`.
    pub lr_variation: f64,
    /// `last/first` of `‖Ψ_σ‖_{L^r}` over the sweep, `r >= 2`.
    pub lr_growth: f64,
    pub fourier_error: f64,
    pub moment_error: f64,
    pub runge_control_factor: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            identity_gap: 1e-3,
            ratio_range: [3.5, 4.5],
            lr_variation: 0.25,
            lr_growth: 2.0,
            fourier_error: 0.02,
            moment_error: 0.30,
            runge_control_factor: 50.0,
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file (JSON) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.n < 5 {
            return bad(format!("n = {} is below 5", self.n));
        }
        if !(2..=6).contains(&self.m) {
            return bad(format!("m = {} outside 2..=6", self.m));
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive".into());
        }
        let r = &self.reconstruction;
        if r.n_data < 5 || r.n_recon < 5 {
            return bad("reconstruction grids need n >= 5".into());
        }
        if !(r.kmax > 0.0) || r.basis_kmax.is_some_and(|b| !(b >= 0.0 && b <= r.kmax)) {
            return bad("need 0 < basis_kmax <= kmax".into());
        }
        if r.noise_rel < 0.0 || !(r.length > 0.0) {
            return bad("noise_rel must be >= 0 and length > 0".into());
        }
        if r.lambda.is_some_and(|l| !(l > 0.0)) {
            return bad("lambda must be positive".into());
        }
        if self.linearization.eps <= 0.0 || self.linearization.n_values.is_empty() {
            return bad("linearization needs eps > 0 and at least one grid".into());
        }
        if self.measure_data.n_values.is_empty() || self.measure_data.sigmas.is_empty() {
            return bad("measure_data sweeps must not be empty".into());
        }
        arc(self.gamma)?;
        for path in self.referenced_paths() {
            if !path.exists() {
                return bad(format!("referenced file {} does not exist", path.display()));
            }
        }
        Ok(())
    }

    fn referenced_paths(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        if let QSpec::Csv { path } = &self.q {
            out.push(path.as_path());
        }
        if let BoundarySpec::Csv { path } = &self.f {
            out.push(path.as_path());
        }
        if let MeasureConfig::Density { values_csv } = &self.measure {
            out.push(values_csv.as_path());
        }
        out
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!("empty key segment in `{key}`")));
        }
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => return Err(CliError::Config(format!("`{key}` descends into a non-object"))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one segment")
}

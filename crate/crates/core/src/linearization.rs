//! The m-th derivative of `ε ↦ ∫ Λ_q(ε_1 h_1 + … + ε_m h_m) dμ` at `ε = 0`,
//! evaluated three ways:
//!
//! * [`mixed_difference_dn`]: central mixed differences of the nonlinear DN
//!   map, `2^m` Newton solves per level, optionally Richardson-extrapolated;
//! * [`cascade_oracle`]: the linearized cascade `Δv_j = 0, v_j = h_j`, then
//!   `Δw = -(m!) q v_1⋯v_m, w = 0`, paired as `∫ ∂_ν w dμ`;
//! * [`volume_identity`]: `-(m!) ∫ q v_1⋯v_m Ψ dx` with `Ψ` the harmonic
//!   function carrying `μ`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{boundary_pair, normal_derivative, volume_integral, BoundaryData, Grid, ScalarField};
use crate::linear_solve::{harmonic_extension, solve_dirichlet};
use crate::measure::{solve_measure_dirichlet, BoundaryMeasure};
use crate::semilinear::{dn_map, NewtonParams, SemilinearProblem, DEFAULT_DELTA};

/// Largest supported derivative order (64 corner solves per level).
pub const MAX_ORDER: usize = 6;

/// Default `ε_j ‖h_j‖_∞`.
pub const DEFAULT_STEP: f64 = 1e-2;

/// `m!`.
pub fn factorial(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product()
}

/// Directions, steps, measure and potential for one m-th derivative.
#[derive(Debug, Clone)]
pub struct LinearizationPlan {
    grid: Grid,
    q: ScalarField,
    directions: Vec<BoundaryData>,
    steps: Vec<f64>,
    measure: BoundaryMeasure,
    richardson: usize,
    delta: f64,
    newton: NewtonParams,
}

impl LinearizationPlan {
    /// Plan with default steps `ε_j = 1e-2/‖h_j‖_∞`, one Richardson level and
    /// the default smallness budget.
    pub fn new(grid: &Grid, q: ScalarField, directions: Vec<BoundaryData>, measure: BoundaryMeasure) -> Result<Self> {
        let steps = directions
            .iter()
            .map(|h| {
                let norm = h.max_abs();
                if norm > 0.0 {
                    DEFAULT_STEP / norm
                } else {
                    DEFAULT_STEP
                }
            })
            .collect();
        let plan = Self {
            grid: grid.clone(),
            q,
            directions,
            steps,
            measure,
            richardson: 1,
            delta: DEFAULT_DELTA,
            newton: NewtonParams::default(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_steps(mut self, steps: Vec<f64>) -> Result<Self> {
        self.steps = steps;
        self.validate()?;
        Ok(self)
    }

    /// Rescales every default step by `factor`.
    pub fn with_step_scale(mut self, factor: f64) -> Result<Self> {
        for s in &mut self.steps {
            *s *= factor;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn with_richardson(mut self, levels: usize) -> Self {
        self.richardson = levels;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_newton(mut self, newton: NewtonParams) -> Self {
        self.newton = newton;
        self
    }

    pub fn with_potential(mut self, q: ScalarField) -> Result<Self> {
        self.q = q;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let m = self.directions.len();
        if !(2..=MAX_ORDER).contains(&m) {
            return Err(Error::InvalidInput(format!("derivative order must be in 2..={MAX_ORDER}, got {m}")));
        }
        if self.steps.len() != m {
            return Err(Error::ShapeMismatch { expected: m, actual: self.steps.len() });
        }
        if self.steps.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::InvalidInput("steps must be positive".into()));
        }
        self.q.check_grid(&self.grid)?;
        self.measure.check_grid(&self.grid)?;
        for h in &self.directions {
            h.check_grid(&self.grid)?;
        }
        // every corner datum Σ ±ε_j h_j must stay inside the budget
        let budget: f64 = self.steps.iter().zip(&self.directions).map(|(e, h)| e * h.max_abs()).sum();
        if budget >= self.delta {
            return Err(Error::DataTooLarge { norm: budget, delta: self.delta });
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn m(&self) -> usize {
        self.directions.len()
    }

    pub fn q(&self) -> &ScalarField {
        &self.q
    }

    pub fn directions(&self) -> &[BoundaryData] {
        &self.directions
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn measure(&self) -> &BoundaryMeasure {
        &self.measure
    }

    pub fn richardson(&self) -> usize {
        self.richardson
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Sign vectors `{-1, +1}^m` in lexicographic order.
pub fn sign_vectors(m: usize) -> Vec<Vec<i8>> {
    (0..1usize << m)
        .map(|bits| (0..m).map(|j| if bits >> (m - 1 - j) & 1 == 1 { 1 } else { -1 }).collect())
        .collect()
}

/// Nonlinear part of `∫ Λ_q(f_s) dμ` at one corner `f_s = Σ s_j (scale ε_j) h_j`.
///
/// The linear DN map contributes `Σ_j s_j ε_j ∫ Λ_0(h_j) dμ`, which the signed
/// corner sum of order `m >= 2` annihilates exactly; only the correction flux
/// is returned.
fn corner_value(plan: &LinearizationPlan, signs: &[i8], scale: f64) -> Result<f64> {
    let terms: Vec<(f64, &BoundaryData)> = signs
        .iter()
        .zip(&plan.steps)
        .zip(&plan.directions)
        .map(|((&s, &e), h)| (s as f64 * scale * e, h))
        .collect();
    let data = BoundaryData::linear_combination(&terms);
    let problem = SemilinearProblem::new(&plan.grid, plan.q.clone(), plan.m() as u32, data, plan.delta)?;
    let record = dn_map(&problem, &plan.newton, Some(&plan.measure))?;
    Ok(record.nonlinear_pairing.expect("measure attached"))
}

/// One level of the central mixed difference with all steps multiplied by `scale`.
pub fn mixed_difference_at_scale(plan: &LinearizationPlan, scale: f64) -> Result<f64> {
    let signs = sign_vectors(plan.m());
    let values: Vec<f64> = signs
        .par_iter()
        .map(|s| {
            corner_value(plan, s, scale).map_err(|e| Error::CornerFailed { signs: s.clone(), source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let mut sum = 0.0;
    for (s, v) in signs.iter().zip(&values) {
        let parity: i32 = s.iter().map(|&x| x as i32).product();
        sum += parity as f64 * v;
    }
    let denom: f64 = plan.steps.iter().map(|e| 2.0 * scale * e).product();
    Ok(sum / denom)
}

/// Richardson table over step halvings; entry `k` of level `l` removes the
/// `ε^2, …, ε^{2l}` error terms.
pub fn richardson_extrapolate(levels: &[f64]) -> f64 {
    let mut table = levels.to_vec();
    for l in 1..levels.len() {
        let factor = 4f64.powi(l as i32);
        for k in 0..levels.len() - l {
            table[k] = (factor * table[k + 1] - table[k]) / (factor - 1.0);
        }
    }
    table[0]
}

/// The m-th mixed central difference of `ε ↦ ∫ Λ_q(f_ε) dμ` at `ε = 0`.
pub fn mixed_difference_dn(plan: &LinearizationPlan) -> Result<f64> {
    let levels = (0..=plan.richardson)
        .map(|k| mixed_difference_at_scale(plan, 0.5f64.powi(k as i32)))
        .collect::<Result<Vec<_>>>()?;
    Ok(richardson_extrapolate(&levels))
}

/// First linearizations `v_j` of every direction.
pub fn first_linearizations(plan: &LinearizationPlan) -> Result<Vec<ScalarField>> {
    plan.directions.iter().map(|h| harmonic_extension(&plan.grid, h)).collect()
}

/// `v_1 ⋯ v_m`.
pub fn product(fields: &[ScalarField]) -> ScalarField {
    let mut out = fields[0].clone();
    for f in &fields[1..] {
        out = out.mul(f);
    }
    out
}

/// Solution `w` of `Δw = -(m!) q v_1⋯v_m`, `w = 0` on the boundary.
pub fn cascade_solution(plan: &LinearizationPlan) -> Result<ScalarField> {
    let v = first_linearizations(plan)?;
    let source = plan.q.mul(&product(&v)).scaled(-factorial(plan.m()));
    solve_dirichlet(&plan.grid, &source, &BoundaryData::zeros(&plan.grid), None)
}

/// `∫ ∂_ν w dμ` from the linearized cascade; the exact discrete m-th derivative.
pub fn cascade_oracle(plan: &LinearizationPlan) -> Result<f64> {
    let w = cascade_solution(plan)?;
    let flux = normal_derivative(&plan.grid, &w)?;
    boundary_pair(&plan.grid, &flux, &plan.measure)
}

/// `-(m!) ∫ q v_1⋯v_m Ψ dx`.
pub fn volume_identity(plan: &LinearizationPlan) -> Result<f64> {
    let v = first_linearizations(plan)?;
    let psi = solve_measure_dirichlet(&plan.grid, &plan.measure)?;
    let integrand = plan.q.mul(&product(&v)).mul(&psi);
    Ok(-factorial(plan.m()) * volume_integral(&plan.grid, &integrand)?)
}

/// The three evaluations side by side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityValues {
    pub mixed: f64,
    pub cascade: f64,
    pub volume: f64,
}

impl IdentityValues {
    /// `|mixed - cascade| / |cascade|`.
    pub fn mixed_gap(&self) -> f64 {
        (self.mixed - self.cascade).abs() / self.cascade.abs()
    }

    /// `|cascade - volume| / |cascade|`.
    pub fn volume_gap(&self) -> f64 {
        (self.cascade - self.volume).abs() / self.cascade.abs()
    }
}

pub fn evaluate_identities(plan: &LinearizationPlan) -> Result<IdentityValues> {
    Ok(IdentityValues {
        mixed: mixed_difference_dn(plan)?,
        cascade: cascade_oracle(plan)?,
        volume: volume_identity(plan)?,
    })
}

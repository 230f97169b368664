//! Small solutions of `Δu + q u^m = 0` with Dirichlet data `f`, and the
//! nonlinear Dirichlet-to-Neumann map built on them.
//!
//! The solution is split as `u = v + z` where `v` is the harmonic extension of
//! `f` and `z` vanishes on the boundary. Newton's method runs on `z`, which
//! keeps the nonlinear part of the solution (and of the flux) at full relative
//! precision even when it is many orders of magnitude below `v`.

use crate::error::{Error, Result};
use crate::grid::{
    apply_laplacian, boundary_pair, normal_derivative, BoundaryData, Grid, ScalarField,
};
use crate::linear_solve::{assemble_field, harmonic_extension, interior_values};
use crate::measure::BoundaryMeasure;

/// Default smallness budget for the Dirichlet data.
pub const DEFAULT_DELTA: f64 = 5e-2;

/// Relative tolerance of the inner preconditioned CG solves.
const INNER_TOL: f64 = 1e-14;

/// Newton updates below this fraction of `|z|_inf` are at roundoff level.
const UPDATE_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonParams {
    pub max_iter: usize,
    /// Relative residual tolerance, scaled by `max(1, |f|_inf)`.
    pub residual_tol: f64,
    /// Maximum number of step halvings per iteration.
    pub max_halvings: usize,
}

impl Default for NewtonParams {
    fn default() -> Self {
        Self { max_iter: 50, residual_tol: 1e-12, max_halvings: 20 }
    }
}

impl NewtonParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || !(self.residual_tol > 0.0) {
            return Err(Error::InvalidInput("Newton parameters must be positive".into()));
        }
        Ok(())
    }
}

/// `Δu + q u^m = 0` in the square, `u = f` on the boundary, with `|f|_inf < δ`.
#[derive(Debug, Clone)]
pub struct SemilinearProblem {
    grid: Grid,
    q: ScalarField,
    m: u32,
    f: BoundaryData,
    delta: f64,
}

impl SemilinearProblem {
    pub fn new(grid: &Grid, q: ScalarField, m: u32, f: BoundaryData, delta: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidInput(format!("power m must be at least 2, got {m}")));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidInput(format!("smallness budget must be positive, got {delta}")));
        }
        q.check_grid(grid)?;
        f.check_grid(grid)?;
        if !q.is_finite() {
            return Err(Error::NonFinite("potential"));
        }
        let norm = f.max_abs();
        if norm >= delta {
            return Err(Error::DataTooLarge { norm, delta });
        }
        Ok(Self { grid: grid.clone(), q, m, f, delta })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn q(&self) -> &ScalarField {
        &self.q
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn data(&self) -> &BoundaryData {
        &self.f
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Converged small solution and its Newton history.
#[derive(Debug, Clone)]
pub struct SemilinearSolution {
    /// `u = v + z`.
    pub u: ScalarField,
    /// Harmonic extension `v` of the data.
    pub linear: ScalarField,
    /// Nonlinear correction `z`, zero on the boundary.
    pub correction: ScalarField,
    /// Number of Newton updates applied.
    pub iterations: usize,
    /// `|Δu + q u^m|_inf` over interior nodes at the returned solution.
    pub residual: f64,
    /// `|δz|_inf` of every applied update.
    pub update_norms: Vec<f64>,
}

/// Nonlinear DN output: the flux and, when a measure is attached, its pairing.
#[derive(Debug, Clone)]
pub struct DnRecord {
    /// `∂_ν u_f` on every boundary node.
    pub flux: BoundaryData,
    /// `∂_ν z`, the part of the flux beyond the linear DN map.
    pub nonlinear_flux: BoundaryData,
    /// `∫ ∂_ν u_f dμ`.
    pub pairing: Option<f64>,
    /// `∫ ∂_ν z dμ`.
    pub nonlinear_pairing: Option<f64>,
    pub iterations: usize,
}

fn power(x: f64, m: u32) -> f64 {
    x.powi(m as i32)
}

/// Scaled residual `h²(-Δz - q (v+z)^m)` on interior unknowns.
fn scaled_residual(grid: &Grid, z: &[f64], v: &[f64], q: &[f64], m: u32, out: &mut [f64]) {
    let h2 = grid.h() * grid.h();
    grid.laplacian().apply(z, out);
    for k in 0..out.len() {
        out[k] -= h2 * q[k] * power(v[k] + z[k], m);
    }
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Newton's method for the small solution, starting from the harmonic
/// extension of the data.
pub fn solve_semilinear(problem: &SemilinearProblem, params: &NewtonParams) -> Result<SemilinearSolution> {
    params.validate()?;
    let grid = &problem.grid;
    let m = problem.m;
    let h2 = grid.h() * grid.h();
    let f_norm = problem.f.max_abs();
    let bound = 2.0 * f_norm;
    let tol = params.residual_tol * f_norm.max(1.0);

    let linear = harmonic_extension(grid, &problem.f)?;
    let v = interior_values(grid, &linear);
    let q = interior_values(grid, &problem.q);
    let lap = grid.laplacian();
    let dim = v.len();

    let mut z = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    scaled_residual(grid, &z, &v, &q, m, &mut g);
    let mut res = max_abs(&g) / h2;
    let mut update_norms = Vec::new();
    let mut last_update = f64::INFINITY;
    let mut trial = vec![0.0; dim];
    let mut g_trial = vec![0.0; dim];

    let mut iterations = 0;
    loop {
        let z_norm = max_abs(&z);
        let at_roundoff = last_update <= UPDATE_FLOOR * z_norm;
        if res == 0.0 || (res <= tol && at_roundoff) {
            break;
        }
        if iterations == params.max_iter {
            return Err(Error::NonConvergence { iterations, residual: res });
        }
        let shift: Vec<f64> = (0..dim)
            .map(|k| h2 * m as f64 * q[k] * power(v[k] + z[k], m - 1))
            .collect();
        let step = lap.solve_shifted(&shift, &g, INNER_TOL)?;
        // G(z) = A z - h² q u^m, J = A - diag(shift): z_new = z - J^{-1} G
        let mut t = 1.0;
        let mut halvings = 0;
        let res_trial = loop {
            for k in 0..dim {
                trial[k] = z[k] - t * step[k];
            }
            scaled_residual(grid, &trial, &v, &q, m, &mut g_trial);
            let r = max_abs(&g_trial) / h2;
            if r < res || res <= tol || halvings == params.max_halvings {
                break r;
            }
            t *= 0.5;
            halvings += 1;
        };
        last_update = t * max_abs(&step);
        update_norms.push(last_update);
        std::mem::swap(&mut z, &mut trial);
        std::mem::swap(&mut g, &mut g_trial);
        res = res_trial;
        iterations += 1;

        let u_norm = (0..dim).fold(0.0f64, |acc, k| acc.max((v[k] + z[k]).abs()));
        if u_norm > bound {
            return Err(Error::BranchEscape { norm: u_norm, bound });
        }
        if !res.is_finite() {
            return Err(Error::NonConvergence { iterations, residual: res });
        }
    }

    let correction = assemble_field(grid, &z, &BoundaryData::zeros(grid));
    let u = linear.zip_with(&correction, |a, b| a + b);
    let residual = full_residual(grid, &u, &problem.q, m)?;
    Ok(SemilinearSolution { u, linear, correction, iterations, residual, update_norms })
}

/// `|Δu + q u^m|_inf` over interior nodes.
pub fn full_residual(grid: &Grid, u: &ScalarField, q: &ScalarField, m: u32) -> Result<f64> {
    let lap = apply_laplacian(grid, u)?;
    let n = grid.n();
    let mut worst: f64 = 0.0;
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            worst = worst.max((lap.at(i, j) + q.at(i, j) * power(u.at(i, j), m)).abs());
        }
    }
    Ok(worst)
}

/// The nonlinear DN map `f ↦ ∂_ν u_f`, optionally paired with a measure.
pub fn dn_map(
    problem: &SemilinearProblem,
    params: &NewtonParams,
    measure: Option<&BoundaryMeasure>,
) -> Result<DnRecord> {
    let grid = problem.grid();
    let sol = solve_semilinear(problem, params)?;
    let flux = normal_derivative(grid, &sol.u)?;
    let nonlinear_flux = normal_derivative(grid, &sol.correction)?;
    let (pairing, nonlinear_pairing) = match measure {
        Some(mu) => (
            Some(boundary_pair(grid, &flux, mu)?),
            Some(boundary_pair(grid, &nonlinear_flux, mu)?),
        ),
        None => (None, None),
    };
    Ok(DnRecord { flux, nonlinear_flux, pairing, nonlinear_pairing, iterations: sol.iterations })
}

//! Boundary measures and the harmonic function `Ψ` carrying a measure as its
//! boundary value.
//!
//! Measures are represented by a density against arclength on the boundary
//! nodes. A point mass `δ_{x0}` is replaced by a Gaussian in arclength,
//! periodized around the perimeter and normalized to unit discrete mass; `Ψ`
//! is then the harmonic extension of that density.

use crate::error::{Error, Result};
use crate::grid::{
    apply_laplacian, boundary_pair, normal_derivative, pair_with_density, param_of_point, perimeter_offset,
    volume_integral, BoundaryData, Grid, ScalarField,
};
use crate::linear_solve::harmonic_extension;

/// How a measure was built.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureDescriptor {
    /// Mollified point mass at boundary point `x0` (perimeter parameter `s0`).
    PointMass { x0: (f64, f64), s0: f64, sigma: f64 },
    /// Explicit density against arclength.
    Density,
}

/// Finite measure on the boundary, stored as a density per boundary node.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMeasure {
    n: usize,
    density: Vec<f64>,
    descriptor: MeasureDescriptor,
    total_variation: f64,
}

impl BoundaryMeasure {
    /// Measure `ψ dS` for a per-node density `ψ`; the measure must not vanish.
    pub fn from_density(grid: &Grid, density: Vec<f64>) -> Result<Self> {
        Self::build(grid, density, MeasureDescriptor::Density)
    }

    /// Constant density.
    pub fn uniform(grid: &Grid, value: f64) -> Result<Self> {
        Self::from_density(grid, vec![value; grid.boundary_count()])
    }

    fn build(grid: &Grid, density: Vec<f64>, descriptor: MeasureDescriptor) -> Result<Self> {
        if density.len() != grid.boundary_count() {
            return Err(Error::ShapeMismatch { expected: grid.boundary_count(), actual: density.len() });
        }
        if density.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measure density"));
        }
        let abs: Vec<f64> = density.iter().map(|v| v.abs()).collect();
        let ones = vec![1.0; abs.len()];
        let total_variation = pair_with_density(grid, &ones, &abs);
        if total_variation <= 0.0 {
            return Err(Error::InvalidInput("boundary measure vanishes identically".into()));
        }
        Ok(Self { n: grid.n(), density, descriptor, total_variation })
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn descriptor(&self) -> &MeasureDescriptor {
        &self.descriptor
    }

    /// `‖μ‖ = Σ |ρ_b| w_b`.
    pub fn total_variation(&self) -> f64 {
        self.total_variation
    }

    /// `μ(∂Ω)`.
    pub fn total_mass(&self, grid: &Grid) -> f64 {
        let ones = vec![1.0; self.density.len()];
        pair_with_density(grid, &ones, &self.density)
    }

    /// Whether the density is nonnegative everywhere.
    pub fn is_nonnegative(&self) -> bool {
        self.density.iter().all(|&v| v >= 0.0)
    }

    /// The density as boundary data (the Dirichlet datum of `Ψ`).
    pub fn as_boundary_data(&self, grid: &Grid) -> Result<BoundaryData> {
        BoundaryData::full(grid, self.density.clone())
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.n != grid.n() {
            return Err(Error::ShapeMismatch { expected: grid.boundary_count(), actual: self.density.len() });
        }
        Ok(())
    }
}

/// Smallest admissible mollification width on `grid`.
pub fn sigma_floor(grid: &Grid) -> f64 {
    2.0 * grid.h()
}

/// Unit point mass at the boundary point `x0`, mollified by a Gaussian of
/// width `sigma` in arclength.
pub fn mollified_point_mass(grid: &Grid, x0: (f64, f64), sigma: f64) -> Result<BoundaryMeasure> {
    let floor = sigma_floor(grid);
    if !(sigma >= floor * (1.0 - 1e-12)) {
        return Err(Error::Unresolvable { sigma, floor });
    }
    let s0 = param_of_point(x0.0, x0.1)?;
    let mut density: Vec<f64> = (0..grid.boundary_count())
        .map(|b| {
            let d = perimeter_offset(s0, grid.boundary_param(b));
            // periodic images; the perimeter is 4
            (-3..=3)
                .map(|p| {
                    let t = (d + 4.0 * p as f64) / sigma;
                    (-0.5 * t * t).exp()
                })
                .sum::<f64>()
        })
        .collect();
    let ones = vec![1.0; density.len()];
    let mass = pair_with_density(grid, &ones, &density);
    for v in &mut density {
        *v /= mass;
    }
    BoundaryMeasure::build(grid, density, MeasureDescriptor::PointMass { x0, s0, sigma })
}

/// Harmonic function with the measure density as boundary value.
pub fn solve_measure_dirichlet(grid: &Grid, mu: &BoundaryMeasure) -> Result<ScalarField> {
    mu.check_grid(grid)?;
    harmonic_extension(grid, &mu.as_boundary_data(grid)?)
}

/// Laplacian of a field vanishing on the boundary, completed on boundary nodes.
///
/// Along each side `w = 0`, so `Δw` there is the second normal derivative,
/// taken with the one-sided stencil `(2w_0 - 5w_1 + 4w_2 - w_3)/h²`. At the
/// corners both second derivatives are tangential and vanish.
pub fn closed_laplacian(grid: &Grid, w: &ScalarField) -> Result<ScalarField> {
    let mut lap = apply_laplacian(grid, w)?;
    let last = grid.n() - 1;
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    for b in 0..grid.boundary_count() {
        if grid.is_corner(b) {
            continue;
        }
        let (i, j) = grid.boundary_node(b);
        let (di, dj): (isize, isize) = if i == 0 {
            (1, 0)
        } else if i == last {
            (-1, 0)
        } else if j == 0 {
            (0, 1)
        } else {
            (0, -1)
        };
        let at = |k: isize| w.at((i as isize + k * di) as usize, (j as isize + k * dj) as usize);
        lap.set(i, j, (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) * inv_h2);
    }
    Ok(lap)
}

/// `|∫ ∂_ν w dμ - ∫ (Δw) Ψ dx|` for `w` vanishing on the boundary.
pub fn duality_residual(grid: &Grid, psi: &ScalarField, mu: &BoundaryMeasure, w: &ScalarField) -> Result<f64> {
    psi.check_grid(grid)?;
    w.check_grid(grid)?;
    let scale = w.max_abs().max(f64::MIN_POSITIVE);
    let trace = BoundaryData::trace(grid, w);
    if trace.max_abs() > 1e-12 * scale {
        return Err(Error::InvalidInput(format!(
            "w must vanish on the boundary (max |trace| = {:.3e})",
            trace.max_abs()
        )));
    }
    let flux = normal_derivative(grid, w)?;
    let lhs = boundary_pair(grid, &flux, mu)?;
    let rhs = volume_integral(grid, &closed_laplacian(grid, w)?.mul(psi))?;
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::lr_norm;
    use crate::linear_solve::solve_dirichlet;

    #[test]
    fn point_mass_has_unit_mass_and_symmetry() {
        let g = Grid::new(41).unwrap();
        let mu = mollified_point_mass(&g, (1.0, 0.5), 0.2).unwrap();
        assert!((mu.total_mass(&g) - 1.0).abs() < 1e-10);
        assert!((mu.total_variation() - 1.0).abs() < 1e-10);
        // x0 is boundary node 60 (s = 1.5); neighbours at equal arclength match
        let d = mu.density();
        for k in 1..20 {
            assert!((d[60 + k] - d[60 - k]).abs() < 1e-12 * d[60]);
        }
        let ones = BoundaryData::full(&g, vec![1.0; g.boundary_count()]).unwrap();
        assert!((boundary_pair(&g, &ones, &mu).unwrap() - 1.0).abs() < 1e-10);
        assert_eq!(boundary_pair(&g, &BoundaryData::zeros(&g), &mu).unwrap(), 0.0);
    }

    #[test]
    fn unresolvable_width_rejected() {
        let g = Grid::new(41).unwrap();
        assert!(matches!(
            mollified_point_mass(&g, (1.0, 0.5), 0.04),
            Err(Error::Unresolvable { .. })
        ));
        assert!(mollified_point_mass(&g, (0.5, 0.5), 0.1).is_err());
    }

    #[test]
    fn zero_measure_rejected() {
        let g = Grid::new(9).unwrap();
        assert!(BoundaryMeasure::uniform(&g, 0.0).is_err());
    }

    #[test]
    fn pairing_with_x_converges_to_point_value() {
        // the second moment of the symmetric mollifier gives an O(σ²) error
        let g = Grid::new(401).unwrap();
        let x = BoundaryData::from_fn(&g, |x, _| x);
        let errs: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&s| {
                let mu = mollified_point_mass(&g, (1.0, 0.5), s).unwrap();
                (boundary_pair(&g, &x, &mu).unwrap() - 1.0).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2]);
        assert!(errs[2] < 1e-3, "{errs:?}");
    }

    #[test]
    fn uniform_density_gives_constant_psi() {
        let g = Grid::new(21).unwrap();
        let mu = BoundaryMeasure::uniform(&g, 0.25).unwrap();
        let psi = solve_measure_dirichlet(&g, &mu).unwrap();
        assert!(psi.values().iter().all(|v| (v - 0.25).abs() < 1e-13));
    }

    #[test]
    fn point_mass_psi_is_positive() {
        let g = Grid::new(41).unwrap();
        let mu = mollified_point_mass(&g, (0.3, 1.0), 0.1).unwrap();
        let psi = solve_measure_dirichlet(&g, &mu).unwrap();
        assert!(psi.interior_min() > 0.0);
    }

    #[test]
    fn psi_matches_poisson_kernel_columns() {
        // Ψ = Σ_b P(·, y_b) ρ_b w_b with the discrete Poisson kernel
        let g = Grid::new(21).unwrap();
        let mu = mollified_point_mass(&g, (0.0, 0.3), 0.15).unwrap();
        let psi = solve_measure_dirichlet(&g, &mu).unwrap();
        let mut summed = ScalarField::zeros(&g);
        for b in 0..g.boundary_count() {
            let mut unit = vec![0.0; g.boundary_count()];
            unit[b] = 1.0 / g.boundary_arclength(b);
            let kernel = harmonic_extension(&g, &BoundaryData::full(&g, unit).unwrap()).unwrap();
            let weight = mu.density()[b] * g.boundary_arclength(b);
            for (s, k) in summed.values_mut().iter_mut().zip(kernel.values()) {
                *s += weight * k;
            }
        }
        for (a, b) in summed.values().iter().zip(psi.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duality_residual_zero_for_zero_field() {
        let g = Grid::new(21).unwrap();
        let mu = mollified_point_mass(&g, (1.0, 0.5), 0.1).unwrap();
        let psi = solve_measure_dirichlet(&g, &mu).unwrap();
        assert_eq!(duality_residual(&g, &psi, &mu, &ScalarField::zeros(&g)).unwrap(), 0.0);
        let not_zero = ScalarField::constant(&g, 1.0);
        assert!(duality_residual(&g, &psi, &mu, &not_zero).is_err());
    }

    #[test]
    fn duality_residual_second_order_for_uniform_measure() {
        let residual = |n| {
            let g = Grid::new(n).unwrap();
            let mu = BoundaryMeasure::uniform(&g, 0.25).unwrap();
            let psi = solve_measure_dirichlet(&g, &mu).unwrap();
            let w = solve_dirichlet(&g, &ScalarField::constant(&g, 1.0), &BoundaryData::zeros(&g), None).unwrap();
            duality_residual(&g, &psi, &mu, &w).unwrap()
        };
        let (r41, r81, r161) = (residual(41), residual(81), residual(161));
        let (a, b) = (r41 / r81, r81 / r161);
        assert!(a > 3.0 && b > 3.0, "ratios {a} {b}");
    }

    #[test]
    fn lr_norm_of_constant() {
        let g = Grid::new(11).unwrap();
        let c = ScalarField::constant(&g, 2.0);
        assert!((lr_norm(&g, &c, 1.8).unwrap() - 2.0).abs() < 1e-13);
    }
}

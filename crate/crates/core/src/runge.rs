//! Runge approximation on nested rectangles.
//!
//! `Ω_2` is the unit square and `Ω_1 = [0,1] × [0,H]` shares its bottom, left
//! and right sides. Discrete Green columns of `Ω_2` with sources in the strip
//! above `Ω_1` are harmonic in `Ω_1` and vanish on the shared sides; their span
//! approximates every such harmonic function.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{BoundaryData, Grid, ScalarField};

/// Relative singular-value cutoff of the truncated SVD fit.
pub const SVD_CUTOFF: f64 = 1e-12;

/// Discrete Green column: `-Δ_h G = δ_y / h²` in `Ω_2`, `G = 0` on `∂Ω_2`.
pub fn green_column(grid: &Grid, source: (usize, usize)) -> Result<ScalarField> {
    let (i, j) = source;
    if i >= grid.n() || j >= grid.n() || grid.is_boundary(i, j) {
        return Err(Error::InvalidInput(format!("source ({i}, {j}) is not an interior node")));
    }
    let h2 = grid.h() * grid.h();
    let mut f = ScalarField::zeros(grid);
    f.set(i, j, -1.0 / h2);
    grid.laplacian().solve(grid, Some(&f), &BoundaryData::zeros(grid))
}

/// Outer grid, inner rectangle of `rows` node rows (`j = 0 ..= rows`), and the
/// candidate source nodes.
#[derive(Debug, Clone)]
pub struct NestedDomains {
    grid: Grid,
    rows: usize,
    sources: Vec<(usize, usize)>,
}

impl NestedDomains {
    /// `Ω_1 = [0,1] × [0, inner_height]`, with `count` candidate sources on the
    /// line `y = source_height` at `x = (2j+1)/(2 count)`.
    pub fn new(grid: &Grid, inner_height: f64, source_height: f64, count: usize) -> Result<Self> {
        let n = grid.n();
        let to_row = |y: f64| -> Result<usize> {
            let r = y / grid.h();
            if (r - r.round()).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("height {y} is not on a grid row")));
            }
            Ok(r.round() as usize)
        };
        let rows = to_row(inner_height)?;
        let src_row = to_row(source_height)?;
        if rows < 2 || src_row <= rows || src_row >= n - 1 {
            return Err(Error::InvalidInput("sources must lie strictly between Ω_1 and the top side".into()));
        }
        let sources = (0..count)
            .map(|k| {
                let x = (2 * k + 1) as f64 / (2 * count) as f64;
                let i = (x / grid.h()).round() as usize;
                if (i as f64 * grid.h() - x).abs() > 1e-9 || i == 0 || i >= n - 1 {
                    return Err(Error::InvalidInput(format!("source x = {x} is not an interior grid column")));
                }
                Ok((i, src_row))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: grid.clone(), rows, sources })
    }

    /// `n = 129`, `Ω_1 = [0,1] × [0, 3/4]`, 64 sources at `y = 7/8`.
    pub fn standard() -> Self {
        Self::new(&Grid::new(129).expect("valid grid"), 0.75, 0.875, 64).expect("valid geometry")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Index of the top (free) row of `Ω_1`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn sources(&self) -> &[(usize, usize)] {
        &self.sources
    }

    /// Every `(len/count)`-th candidate starting at `offset`; subsets for
    /// `count = 8, 16, 32, 64` are nested.
    pub fn source_subset(&self, count: usize, offset: usize) -> Result<Vec<(usize, usize)>> {
        let total = self.sources.len();
        if count == 0 || count > total || !total.is_multiple_of(count) {
            return Err(Error::InvalidInput(format!("{count} sources do not divide {total}")));
        }
        let stride = total / count;
        Ok(self.sources.iter().skip(offset % stride).step_by(stride).cloned().collect())
    }

    pub fn in_inner(&self, j: usize) -> bool {
        j <= self.rows
    }

    /// Trapezoidal weight of node `(i, j)` in `Ω_1`.
    pub fn inner_weight(&self, i: usize, j: usize) -> f64 {
        let n = self.grid.n();
        let h = self.grid.h();
        let wx = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let wy = if j == 0 || j == self.rows { 0.5 } else { 1.0 };
        h * h * wx * wy
    }

    /// Discrete `L²(Ω_1)` norm.
    pub fn inner_norm(&self, u: &ScalarField) -> f64 {
        let n = self.grid.n();
        let mut s = 0.0;
        for j in 0..=self.rows {
            for i in 0..n {
                s += self.inner_weight(i, j) * u.at(i, j).powi(2);
            }
        }
        s.sqrt()
    }

    /// `max |u|` over the shared sides (bottom row, left and right columns of `Ω_1`).
    pub fn shared_trace_max(&self, u: &ScalarField) -> f64 {
        let n = self.grid.n();
        let mut m: f64 = 0.0;
        for i in 0..n {
            m = m.max(u.at(i, 0).abs());
        }
        for j in 0..=self.rows {
            m = m.max(u.at(0, j).abs()).max(u.at(n - 1, j).abs());
        }
        m
    }

    /// `max |Δ_h u|` over nodes strictly inside `Ω_1`.
    pub fn inner_harmonic_defect(&self, u: &ScalarField) -> f64 {
        let n = self.grid.n();
        let h2 = self.grid.h() * self.grid.h();
        let mut m: f64 = 0.0;
        for j in 1..self.rows {
            for i in 1..n - 1 {
                let lap = u.at(i + 1, j) + u.at(i - 1, j) + u.at(i, j + 1) + u.at(i, j - 1) - 4.0 * u.at(i, j);
                m = m.max((lap / h2).abs());
            }
        }
        m
    }

    /// Exact discrete harmonic function on `Ω_1`, zero on the shared sides:
    /// `Σ_k a_k sin(kπx) sinh(θ_k j) / sinh(θ_k J)` with
    /// `cosh θ_k = 1 + 2 sin²(kπh/2)`. Zero outside `Ω_1`.
    pub fn separable_target(&self, coeffs: &[f64]) -> ScalarField {
        let g = &self.grid;
        let big_j = self.rows as f64;
        let thetas: Vec<f64> = (1..=coeffs.len())
            .map(|k| (1.0 + 2.0 * (k as f64 * PI * g.h() / 2.0).sin().powi(2)).acosh())
            .collect();
        let mut u = ScalarField::zeros(g);
        for j in 0..=self.rows {
            for i in 0..g.n() {
                let x = i as f64 * g.h();
                let v: f64 = coeffs
                    .iter()
                    .zip(&thetas)
                    .enumerate()
                    .map(|(k, (a, t))| {
                        // sinh(θj)/sinh(θJ) without overflow
                        let ratio = (t * (j as f64 - big_j)).exp() * (1.0 - (-2.0 * t * j as f64).exp())
                            / (1.0 - (-2.0 * t * big_j).exp());
                        a * ((k + 1) as f64 * PI * x).sin() * ratio
                    })
                    .sum();
                u.set(i, j, v);
            }
        }
        u
    }

    /// Constant on `Ω_1`, zero elsewhere; violates the shared-trace condition.
    pub fn constant_target(&self, c: f64) -> ScalarField {
        let mut u = ScalarField::zeros(&self.grid);
        for j in 0..=self.rows {
            for i in 0..self.grid.n() {
                u.set(i, j, c);
            }
        }
        u
    }
}

/// Least-squares fit of Green columns to a target on `Ω_1`.
#[derive(Debug, Clone)]
pub struct RungeFit {
    pub coefficients: Vec<f64>,
    /// `‖fit - target‖ / ‖target‖` in discrete `L²(Ω_1)` (0 for a zero target).
    pub residual: f64,
    /// `σ_max / σ_min` of the weighted design matrix.
    pub condition: f64,
    /// Singular values kept by the truncated SVD.
    pub rank: usize,
    /// Target trace on the shared sides vanished to tolerance.
    pub admissible: bool,
}

/// Fits `Σ c_j G(·, y_j)|_{Ω_1}` to `target` by truncated SVD.
pub fn runge_fit(dom: &NestedDomains, target: &ScalarField, sources: &[(usize, usize)]) -> Result<RungeFit> {
    let g = &dom.grid;
    target.check_grid(g)?;
    if sources.is_empty() {
        return Err(Error::InvalidInput("no sources".into()));
    }
    let scale = target.max_abs().max(f64::MIN_POSITIVE);
    let defect = dom.inner_harmonic_defect(target);
    if defect > 1e-8 * scale / (g.h() * g.h()) {
        return Err(Error::InvalidInput(format!("target is not discretely harmonic on Ω_1 (defect {defect:.3e})")));
    }
    let admissible = dom.shared_trace_max(target) <= 1e-10 * scale;
    let columns = sources.par_iter().map(|&y| green_column(g, y)).collect::<Result<Vec<_>>>()?;

    let n = g.n();
    let nodes: Vec<(usize, usize)> = (0..=dom.rows).flat_map(|j| (0..n).map(move |i| (i, j))).collect();
    let sqrt_w: Vec<f64> = nodes.iter().map(|&(i, j)| dom.inner_weight(i, j).sqrt()).collect();
    let design = DMatrix::from_fn(nodes.len(), sources.len(), |r, c| {
        let (i, j) = nodes[r];
        sqrt_w[r] * columns[c].at(i, j)
    });
    let rhs = DVector::from_fn(nodes.len(), |r, _| {
        let (i, j) = nodes[r];
        sqrt_w[r] * target.at(i, j)
    });
    let target_norm = rhs.norm();
    if target_norm == 0.0 {
        return Ok(RungeFit {
            coefficients: vec![0.0; sources.len()],
            residual: 0.0,
            condition: condition_of(&design),
            rank: 0,
            admissible,
        });
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = SVD_CUTOFF * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let coeffs = svd.solve(&rhs, cutoff).map_err(|e| Error::SingularSystem(e.to_string()))?;
    let residual = (&design * &coeffs - &rhs).norm() / target_norm;
    Ok(RungeFit {
        coefficients: coeffs.iter().cloned().collect(),
        residual,
        condition: smax / svd.singular_values.min(),
        rank,
        admissible,
    })
}

fn condition_of(design: &DMatrix<f64>) -> f64 {
    let s = design.singular_values();
    s.max() / s.min()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NestedDomains {
        NestedDomains::new(&Grid::new(33).unwrap(), 0.75, 0.875, 16).unwrap()
    }

    #[test]
    fn green_column_is_symmetric_and_positive() {
        let g = Grid::new(17).unwrap();
        let a = green_column(&g, (3, 5)).unwrap();
        let b = green_column(&g, (11, 12)).unwrap();
        assert!((a.at(11, 12) - b.at(3, 5)).abs() < 1e-10 * a.at(11, 12));
        assert!(a.interior_min() > 0.0);
        assert!(green_column(&g, (0, 4)).is_err());
    }

    #[test]
    fn green_column_decays_along_grid_lines() {
        let g = Grid::new(33).unwrap();
        let col = green_column(&g, (16, 16)).unwrap();
        for i in 16..31 {
            assert!(col.at(i + 1, 16) < col.at(i, 16));
            assert!(col.at(16, i + 1) < col.at(16, i));
        }
    }

    #[test]
    fn geometry_and_subsets() {
        let d = NestedDomains::standard();
        assert_eq!(d.rows(), 96);
        assert_eq!(d.sources().len(), 64);
        assert_eq!(d.sources()[0], (1, 112));
        let s8 = d.source_subset(8, 0).unwrap();
        let s16 = d.source_subset(16, 0).unwrap();
        assert!(s8.iter().all(|p| s16.contains(p)));
        assert!(d.source_subset(7, 0).is_err());
        assert!(NestedDomains::new(&Grid::new(129).unwrap(), 0.75, 0.7, 8).is_err());
    }

    #[test]
    fn separable_target_is_admissible() {
        let d = small();
        let t = d.separable_target(&[1.0, -0.5, 0.25]);
        assert!(d.inner_harmonic_defect(&t) < 1e-9);
        assert!(d.shared_trace_max(&t) < 1e-14);
        // free-side trace is the sine series
        let x = 5.0 / 32.0;
        let top = 1.0 * (PI * x).sin() - 0.5 * (2.0 * PI * x).sin() + 0.25 * (3.0 * PI * x).sin();
        assert!((t.at(5, d.rows()) - top).abs() < 1e-12);
    }

    #[test]
    fn zero_target_fits_exactly() {
        let d = small();
        let fit = runge_fit(&d, &ScalarField::zeros(d.grid()), d.sources()).unwrap();
        assert_eq!(fit.residual, 0.0);
        assert!(fit.coefficients.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn green_column_itself_is_reproduced() {
        let d = small();
        let mut t = green_column(d.grid(), d.sources()[3]).unwrap();
        for j in d.rows() + 1..d.grid().n() {
            for i in 0..d.grid().n() {
                t.set(i, j, 0.0);
            }
        }
        let fit = runge_fit(&d, &t, d.sources()).unwrap();
        assert!(fit.admissible);
        assert!(fit.residual < 1e-8, "{}", fit.residual);
    }

    #[test]
    fn residual_decreases_with_more_sources() {
        let d = small();
        let t = d.separable_target(&[1.0, 0.3, -0.2, 0.1]);
        let r4 = runge_fit(&d, &t, &d.source_subset(4, 0).unwrap()).unwrap().residual;
        let r16 = runge_fit(&d, &t, &d.source_subset(16, 0).unwrap()).unwrap().residual;
        assert!(r16 < r4);
        let c = runge_fit(&d, &d.constant_target(1.0), d.sources()).unwrap();
        assert!(!c.admissible);
        assert!(c.residual > 10.0 * r16);
    }

    #[test]
    fn rejects_non_harmonic_target() {
        let d = small();
        let t = ScalarField::from_fn(d.grid(), |x, y| x * x * y);
        assert!(runge_fit(&d, &t, d.sources()).is_err());
    }
}

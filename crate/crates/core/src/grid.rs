//! Uniform node grid on the unit square with the discrete operators every
//! other module is built from: the 5-point Laplacian, one-sided normal
//! derivatives on the boundary, and trapezoidal quadrature.
//!
//! Nodes are numbered row-major, `node = j * n + i` with `x = i h`, `y = j h`.
//! Boundary nodes are numbered counter-clockwise starting at the origin, so
//! boundary node `b` sits at perimeter arclength `s = b h`:
//!
//! ```text
//!   s in [0,1): bottom, (s, 0)        s in [2,3): top,  (3 - s, 1)
//!   s in [1,2): right,  (1, s - 1)    s in [3,4): left, (0, 4 - s)
//! ```

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::linear_solve::LinearSystem;
use crate::measure::BoundaryMeasure;

/// Perimeter of the unit square.
pub const PERIMETER: f64 = 4.0;

/// Uniform discretization of `[0,1]^2` with `n` nodes per side.
///
/// Cloning is cheap; clones share the lazily factorized Dirichlet Laplacian.
#[derive(Clone)]
pub struct Grid {
    n: usize,
    h: f64,
    laplacian: Arc<OnceLock<Arc<LinearSystem>>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid").field("n", &self.n).field("h", &self.h).finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl Grid {
    /// Builds the grid; `n >= 5` nodes per side.
    pub fn new(n: usize) -> Result<Self> {
        if n < 5 {
            return Err(Error::InvalidInput(format!(
                "grid needs at least 5 nodes per side, got {n}"
            )));
        }
        Ok(Self {
            n,
            h: 1.0 / (n - 1) as f64,
            laplacian: Arc::new(OnceLock::new()),
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn interior_count(&self) -> usize {
        (self.n - 2) * (self.n - 2)
    }

    #[inline]
    pub fn boundary_count(&self) -> usize {
        4 * (self.n - 1)
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn ij(&self, node: usize) -> (usize, usize) {
        (node % self.n, node / self.n)
    }

    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.h, j as f64 * self.h)
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.n - 1 || j == self.n - 1
    }

    /// Interior unknown index of node `(i, j)`, if interior.
    #[inline]
    pub fn interior_index(&self, i: usize, j: usize) -> Option<usize> {
        if self.is_boundary(i, j) {
            None
        } else {
            Some((j - 1) * (self.n - 2) + (i - 1))
        }
    }

    /// Node `(i, j)` of interior unknown `k`.
    #[inline]
    pub fn interior_node(&self, k: usize) -> (usize, usize) {
        let m = self.n - 2;
        (k % m + 1, k / m + 1)
    }

    /// Node `(i, j)` of boundary index `b` (counter-clockwise from the origin).
    pub fn boundary_node(&self, b: usize) -> (usize, usize) {
        let side_len = self.n - 1;
        let t = b % side_len;
        match b / side_len {
            0 => (t, 0),
            1 => (side_len, t),
            2 => (side_len - t, side_len),
            3 => (0, side_len - t),
            _ => panic!("boundary index {b} out of range"),
        }
    }

    /// Boundary index of node `(i, j)`, if on the boundary.
    pub fn boundary_index(&self, i: usize, j: usize) -> Option<usize> {
        let s = self.n - 1;
        if j == 0 && i < s {
            Some(i)
        } else if i == s && j < s {
            Some(s + j)
        } else if j == s && i > 0 {
            Some(2 * s + (s - i))
        } else if i == 0 && j > 0 {
            Some(3 * s + (s - j))
        } else {
            None
        }
    }

    #[inline]
    pub fn is_corner(&self, b: usize) -> bool {
        b.is_multiple_of(self.n - 1)
    }

    /// Perimeter arclength parameter of boundary node `b`.
    #[inline]
    pub fn boundary_param(&self, b: usize) -> f64 {
        b as f64 * self.h
    }

    pub fn boundary_point(&self, b: usize) -> (f64, f64) {
        let (i, j) = self.boundary_node(b);
        self.coords(i, j)
    }

    /// Arclength quadrature weight of boundary node `b`.
    ///
    /// Trapezoid weights per side; a corner collects `h/2` from each of its
    /// two sides, so every node ends up with weight `h`.
    #[inline]
    pub fn boundary_arclength(&self, _b: usize) -> f64 {
        self.h
    }

    /// Trapezoidal area weight of node `(i, j)`.
    #[inline]
    pub fn area_weight(&self, i: usize, j: usize) -> f64 {
        let last = self.n - 1;
        let wx = if i == 0 || i == last { 0.5 } else { 1.0 };
        let wy = if j == 0 || j == last { 0.5 } else { 1.0 };
        wx * wy * self.h * self.h
    }

    /// Cached factorization of the Dirichlet Laplacian on this grid.
    pub fn laplacian(&self) -> Arc<LinearSystem> {
        self.laplacian
            .get_or_init(|| Arc::new(LinearSystem::laplacian(self.n)))
            .clone()
    }
}

/// Perimeter point at arclength parameter `s` (taken modulo 4).
pub fn point_at_param(s: f64) -> (f64, f64) {
    let s = s.rem_euclid(PERIMETER);
    if s < 1.0 {
        (s, 0.0)
    } else if s < 2.0 {
        (1.0, s - 1.0)
    } else if s < 3.0 {
        (3.0 - s, 1.0)
    } else {
        (0.0, 4.0 - s)
    }
}

/// Perimeter parameter of a point on the boundary of the unit square.
pub fn param_of_point(x: f64, y: f64) -> Result<f64> {
    const TOL: f64 = 1e-12;
    let inside = (-TOL..=1.0 + TOL).contains(&x) && (-TOL..=1.0 + TOL).contains(&y);
    if !inside {
        return Err(Error::InvalidInput(format!("point ({x}, {y}) lies outside the square")));
    }
    let s = if y.abs() <= TOL {
        x
    } else if (x - 1.0).abs() <= TOL {
        1.0 + y
    } else if (y - 1.0).abs() <= TOL {
        3.0 - x
    } else if x.abs() <= TOL {
        4.0 - y
    } else {
        return Err(Error::InvalidInput(format!("point ({x}, {y}) is not on the boundary")));
    };
    Ok(s.clamp(0.0, PERIMETER).rem_euclid(PERIMETER))
}

/// Signed distance from `from` to `to` along the periodic perimeter, in `[-2, 2)`.
#[inline]
pub fn perimeter_offset(from: f64, to: f64) -> f64 {
    (to - from + 2.0).rem_euclid(PERIMETER) - 2.0
}

/// `exp(1 - 1/(1 - t²))` on `|t| < 1`, zero outside; peak value 1 at `t = 0`.
#[inline]
pub fn bump_profile(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

/// Contiguous boundary arc `Γ`, given by a perimeter parameter interval.
///
/// `end` may exceed 4 to wrap past the origin; a length of 4 covers the
/// whole boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryArc {
    start: f64,
    len: f64,
}

impl BoundaryArc {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        let len = end - start;
        if !(start.is_finite() && end.is_finite()) || len <= 0.0 || len > PERIMETER {
            return Err(Error::InvalidInput(format!(
                "boundary arc [{start}, {end}] must have length in (0, 4]"
            )));
        }
        Ok(Self { start: start.rem_euclid(PERIMETER), len })
    }

    pub fn full() -> Self {
        Self { start: 0.0, len: PERIMETER }
    }

    /// One full side: 0 bottom, 1 right, 2 top, 3 left.
    pub fn side(side: usize) -> Result<Self> {
        if side > 3 {
            return Err(Error::InvalidInput(format!("side index {side} out of range")));
        }
        Self::new(side as f64, side as f64 + 1.0)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.start + self.len
    }

    pub fn len(&self) -> f64 {
        self.len
    }

    pub fn is_full(&self) -> bool {
        self.len >= PERIMETER
    }

    /// Midpoint parameter.
    pub fn center(&self) -> f64 {
        (self.start + 0.5 * self.len).rem_euclid(PERIMETER)
    }

    /// Whether perimeter parameter `s` lies in the closed arc.
    pub fn contains(&self, s: f64) -> bool {
        if self.is_full() {
            return true;
        }
        (s - self.start).rem_euclid(PERIMETER) <= self.len + 1e-12
            || (s - self.start).rem_euclid(PERIMETER) >= PERIMETER - 1e-12
    }

    /// Position of `s` inside the arc as a fraction of its length, if inside.
    pub fn local_coordinate(&self, s: f64) -> Option<f64> {
        let mut t = (s - self.start).rem_euclid(PERIMETER);
        if t >= PERIMETER - 1e-12 {
            t = 0.0;
        }
        (t <= self.len + 1e-12).then(|| (t / self.len).min(1.0))
    }

    /// Support mask on the boundary nodes of `grid`.
    pub fn mask(&self, grid: &Grid) -> Vec<bool> {
        (0..grid.boundary_count())
            .map(|b| self.contains(grid.boundary_param(b)))
            .collect()
    }
}

/// A value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    n: usize,
    values: Vec<T>,
}

pub type ScalarField = Field<f64>;
pub type ComplexField = Field<num_complex::Complex64>;

impl<T: Copy + Default> Field<T> {
    pub fn zeros(grid: &Grid) -> Self {
        Self { n: grid.n(), values: vec![T::default(); grid.node_count()] }
    }

    pub fn from_values(grid: &Grid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::ShapeMismatch { expected: grid.node_count(), actual: values.len() });
        }
        Ok(Self { n: grid.n(), values })
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> T) -> Self {
        let values = (0..grid.node_count())
            .map(|node| {
                let (i, j) = grid.ij(node);
                let (x, y) = grid.coords(i, j);
                f(x, y)
            })
            .collect();
        Self { n: grid.n(), values }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[j * self.n + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.values[j * self.n + i] = v;
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Field<U> {
        Field { n: self.n, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.n != grid.n() {
            return Err(Error::ShapeMismatch { expected: grid.node_count(), actual: self.values.len() });
        }
        Ok(())
    }
}

impl ScalarField {
    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self { n: grid.n(), values: vec![c; grid.node_count()] }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.n, other.n, "field grids differ");
        Self {
            n: self.n,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// Minimum over interior nodes.
    pub fn interior_min(&self) -> f64 {
        let n = self.n;
        let mut m = f64::INFINITY;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                m = m.min(self.values[j * n + i]);
            }
        }
        m
    }

    /// Maximum over interior nodes.
    pub fn interior_max(&self) -> f64 {
        let n = self.n;
        let mut m = f64::NEG_INFINITY;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                m = m.max(self.values[j * n + i]);
            }
        }
        m
    }
}

/// Values on the boundary nodes together with the support mask encoding `Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    n: usize,
    values: Vec<f64>,
    support: Vec<bool>,
}

impl BoundaryData {
    /// Data with an explicit support mask; values off the mask must be zero.
    pub fn new(grid: &Grid, values: Vec<f64>, support: Vec<bool>) -> Result<Self> {
        let count = grid.boundary_count();
        if values.len() != count {
            return Err(Error::ShapeMismatch { expected: count, actual: values.len() });
        }
        if support.len() != count {
            return Err(Error::ShapeMismatch { expected: count, actual: support.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("boundary data"));
        }
        if let Some(b) = (0..count).find(|&b| !support[b] && values[b] != 0.0) {
            return Err(Error::InvalidInput(format!(
                "boundary value at node {b} is nonzero outside the support mask"
            )));
        }
        Ok(Self { n: grid.n(), values, support })
    }

    /// Data supported on the whole boundary.
    pub fn full(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        let support = vec![true; grid.boundary_count()];
        Self::new(grid, values, support)
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            n: grid.n(),
            values: vec![0.0; grid.boundary_count()],
            support: vec![true; grid.boundary_count()],
        }
    }

    /// Samples `f(x, y)` at every boundary node.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.boundary_count())
            .map(|b| {
                let (x, y) = grid.boundary_point(b);
                f(x, y)
            })
            .collect();
        Self { n: grid.n(), values, support: vec![true; grid.boundary_count()] }
    }

    /// Samples `f(s)` on the nodes of `arc` and zeroes everything else.
    pub fn on_arc(grid: &Grid, arc: &BoundaryArc, f: impl Fn(f64) -> f64) -> Self {
        let support = arc.mask(grid);
        let values = (0..grid.boundary_count())
            .map(|b| if support[b] { f(grid.boundary_param(b)) } else { 0.0 })
            .collect();
        Self { n: grid.n(), values, support }
    }

    /// Smooth compactly supported bump `height·exp(1 - 1/(1 - t²))`,
    /// `t = (s - center)/half_width`, cut to `arc`.
    pub fn bump(grid: &Grid, arc: &BoundaryArc, center: f64, half_width: f64, height: f64) -> Self {
        Self::on_arc(grid, arc, |s| height * bump_profile(perimeter_offset(center, s) / half_width))
    }

    /// Boundary trace of a node field.
    pub fn trace(grid: &Grid, u: &ScalarField) -> Self {
        let values = (0..grid.boundary_count())
            .map(|b| {
                let (i, j) = grid.boundary_node(b);
                u.at(i, j)
            })
            .collect();
        Self { n: grid.n(), values, support: vec![true; grid.boundary_count()] }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|v| c * v).collect(),
            support: self.support.clone(),
        }
    }

    /// `Σ c_j d_j` over equally shaped data; the support is the union.
    pub fn linear_combination(terms: &[(f64, &BoundaryData)]) -> Self {
        let first = terms.first().expect("at least one term").1;
        let mut values = vec![0.0; first.values.len()];
        let mut support = vec![false; first.values.len()];
        for (c, d) in terms {
            assert_eq!(d.n, first.n, "boundary data grids differ");
            for b in 0..values.len() {
                values[b] += c * d.values[b];
                support[b] |= d.support[b];
            }
        }
        Self { n: first.n, values, support }
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.n != grid.n() {
            return Err(Error::ShapeMismatch { expected: grid.boundary_count(), actual: self.values.len() });
        }
        Ok(())
    }
}

/// 5-point Laplacian at interior nodes; boundary nodes are set to zero.
pub fn apply_laplacian(grid: &Grid, u: &ScalarField) -> Result<ScalarField> {
    u.check_grid(grid)?;
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let v = u.values();
    let mut out = vec![0.0; grid.node_count()];
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let c = j * n + i;
            out[c] = (v[c + 1] + v[c - 1] + v[c + n] + v[c - n] - 4.0 * v[c]) * inv_h2;
        }
    }
    ScalarField::from_values(grid, out)
}

/// Outward normal derivative on every boundary node.
///
/// Uses the one-sided second-order stencil `(3 u_b - 4 u_1 + u_2) / (2h)`
/// along the inward normal; corners average the two adjacent sides.
pub fn normal_derivative(grid: &Grid, u: &ScalarField) -> Result<BoundaryData> {
    u.check_grid(grid)?;
    let last = grid.n() - 1;
    let inv_2h = 0.5 / grid.h();
    let one_sided = |i: usize, j: usize, di: isize, dj: isize| {
        let step = |k: isize| {
            u.at((i as isize + k * di) as usize, (j as isize + k * dj) as usize)
        };
        (3.0 * step(0) - 4.0 * step(1) + step(2)) * inv_2h
    };
    let values = (0..grid.boundary_count())
        .map(|b| {
            let (i, j) = grid.boundary_node(b);
            // inward directions available at this node
            let mut sum = 0.0;
            let mut count = 0.0;
            if i == 0 {
                sum += one_sided(i, j, 1, 0);
                count += 1.0;
            }
            if i == last {
                sum += one_sided(i, j, -1, 0);
                count += 1.0;
            }
            if j == 0 {
                sum += one_sided(i, j, 0, 1);
                count += 1.0;
            }
            if j == last {
                sum += one_sided(i, j, 0, -1);
                count += 1.0;
            }
            sum / count
        })
        .collect();
    BoundaryData::full(grid, values)
}

/// `Σ_b φ_b ρ_b w_b` for a per-node density `ρ` against arclength.
pub fn pair_with_density(grid: &Grid, phi: &[f64], density: &[f64]) -> f64 {
    debug_assert_eq!(phi.len(), grid.boundary_count());
    debug_assert_eq!(density.len(), grid.boundary_count());
    (0..grid.boundary_count())
        .map(|b| phi[b] * density[b] * grid.boundary_arclength(b))
        .sum()
}

/// `∫_{∂Ω} φ dμ`.
pub fn boundary_pair(grid: &Grid, phi: &BoundaryData, mu: &BoundaryMeasure) -> Result<f64> {
    phi.check_grid(grid)?;
    mu.check_grid(grid)?;
    Ok(pair_with_density(grid, phi.values(), mu.density()))
}

/// Trapezoidal quadrature of `u` over the square.
pub fn volume_integral(grid: &Grid, u: &ScalarField) -> Result<f64> {
    u.check_grid(grid)?;
    let n = grid.n();
    let mut sum = 0.0;
    for j in 0..n {
        for i in 0..n {
            sum += grid.area_weight(i, j) * u.at(i, j);
        }
    }
    Ok(sum)
}

/// Discrete `L^r` norm, `(∫ |u|^r)^{1/r}`, by trapezoidal quadrature.
pub fn lr_norm(grid: &Grid, u: &ScalarField, r: f64) -> Result<f64> {
    let powered = u.map(|v| v.abs().powf(r));
    Ok(volume_integral(grid, &powered)?.powf(1.0 / r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_interior_abs(grid: &Grid, f: &ScalarField) -> f64 {
        let n = grid.n();
        let mut m: f64 = 0.0;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                m = m.max(f.at(i, j).abs());
            }
        }
        m
    }

    #[test]
    fn small_grid_counts() {
        let g = Grid::new(5).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.interior_count(), 9);
        assert_eq!(g.boundary_count(), 16);
        assert!(Grid::new(3).is_err());
        assert!(Grid::new(4).is_err());
    }

    #[test]
    fn index_maps_partition_nodes() {
        let g = Grid::new(7).unwrap();
        let mut seen = vec![0u8; g.node_count()];
        for k in 0..g.interior_count() {
            let (i, j) = g.interior_node(k);
            assert_eq!(g.interior_index(i, j), Some(k));
            seen[g.node(i, j)] += 1;
        }
        for b in 0..g.boundary_count() {
            let (i, j) = g.boundary_node(b);
            assert_eq!(g.boundary_index(i, j), Some(b));
            seen[g.node(i, j)] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        for b in [0, 6, 12, 18] {
            assert!(g.is_corner(b));
        }
    }

    #[test]
    fn perimeter_weights_sum_to_four() {
        let g = Grid::new(101).unwrap();
        let total: f64 = (0..g.boundary_count()).map(|b| g.boundary_arclength(b)).sum();
        assert!((total - 4.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_param_roundtrip() {
        let g = Grid::new(9).unwrap();
        for b in 0..g.boundary_count() {
            let (x, y) = g.boundary_point(b);
            let s = param_of_point(x, y).unwrap();
            assert!((s - g.boundary_param(b)).abs() < 1e-12, "b={b}");
            let (px, py) = point_at_param(s);
            assert!((px - x).abs() < 1e-12 && (py - y).abs() < 1e-12);
        }
        assert!(param_of_point(0.5, 0.5).is_err());
    }

    #[test]
    fn laplacian_exact_on_affine_and_quadratic() {
        let g = Grid::new(17).unwrap();
        let lin = ScalarField::from_fn(&g, |x, _| x);
        assert!(max_interior_abs(&g, &apply_laplacian(&g, &lin).unwrap()) < 1e-10);
        let quad = ScalarField::from_fn(&g, |x, y| x * x + y * y);
        let lap = apply_laplacian(&g, &quad).unwrap();
        for j in 1..16 {
            for i in 1..16 {
                assert!((lap.at(i, j) - 4.0).abs() < 1e-9);
            }
        }
        assert_eq!(lap.at(0, 3), 0.0);
    }

    #[test]
    fn laplacian_second_order_on_sine() {
        use std::f64::consts::PI;
        let err = |n| {
            let g = Grid::new(n).unwrap();
            let u = ScalarField::from_fn(&g, |x, y| (PI * x).sin() * (PI * y).sin());
            let lap = apply_laplacian(&g, &u).unwrap();
            let diff = lap.zip_with(&u, |l, u| l + 2.0 * PI * PI * u);
            max_interior_abs(&g, &diff)
        };
        let ratio = err(41) / err(81);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn normal_derivative_of_constant_and_affine() {
        let g = Grid::new(11).unwrap();
        let c = ScalarField::constant(&g, 3.5);
        assert!(normal_derivative(&g, &c).unwrap().max_abs() < 1e-12);
        let u = ScalarField::from_fn(&g, |x, _| x);
        let d = normal_derivative(&g, &u).unwrap();
        for b in 0..g.boundary_count() {
            if g.is_corner(b) {
                continue;
            }
            let (x, y) = g.boundary_point(b);
            let expected = if x == 1.0 {
                1.0
            } else if x == 0.0 {
                -1.0
            } else {
                assert!(y == 0.0 || y == 1.0);
                0.0
            };
            assert!((d.values()[b] - expected).abs() < 1e-12, "b={b}");
        }
        // corners average the adjacent sides
        assert!((d.values()[10] - 0.5).abs() < 1e-12);
        assert!((d.values()[30] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn normal_derivative_exact_for_quadratic_in_normal() {
        let g = Grid::new(9).unwrap();
        let u = ScalarField::from_fn(&g, |_, y| y * y);
        let d = normal_derivative(&g, &u).unwrap();
        for b in 1..8 {
            assert!(d.values()[b].abs() < 1e-12);
        }
        for b in 17..24 {
            assert!((d.values()[b] - 2.0).abs() < 1e-11);
        }
    }

    #[test]
    fn volume_integral_exact_cases() {
        let g = Grid::new(21).unwrap();
        let one = volume_integral(&g, &ScalarField::constant(&g, 1.0)).unwrap();
        assert!((one - 1.0).abs() < 1e-13, "{one}");
        let x = ScalarField::from_fn(&g, |x, _| x);
        assert!((volume_integral(&g, &x).unwrap() - 0.5).abs() < 1e-13);
    }

    #[test]
    fn volume_integral_second_order_on_sine() {
        use std::f64::consts::PI;
        let err = |n| {
            let g = Grid::new(n).unwrap();
            let u = ScalarField::from_fn(&g, |x, y| (PI * x).sin() * (PI * y).sin());
            (volume_integral(&g, &u).unwrap() - 4.0 / (PI * PI)).abs()
        };
        let ratio = err(41) / err(81);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn arcs_and_masks() {
        let g = Grid::new(11).unwrap();
        let side = BoundaryArc::side(3).unwrap();
        let mask = side.mask(&g);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 11);
        let wrap = BoundaryArc::new(3.5, 4.5).unwrap();
        assert!(wrap.contains(0.2) && wrap.contains(3.9) && !wrap.contains(1.0));
        assert!(BoundaryArc::full().mask(&g).iter().all(|&m| m));
        assert!(BoundaryArc::new(1.0, 1.0).is_err());
    }

    #[test]
    fn boundary_data_rejects_values_off_support() {
        let g = Grid::new(5).unwrap();
        let mut support = vec![true; 16];
        support[3] = false;
        let mut values = vec![0.0; 16];
        values[3] = 1.0;
        assert!(BoundaryData::new(&g, values, support).is_err());
    }
}

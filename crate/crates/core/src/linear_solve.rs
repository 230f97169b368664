//! Discrete Dirichlet problems `Δv + c v = F` in the square, `v = g` on the
//! boundary.
//!
//! The interior system is assembled as `h²(-Δ - c)`, which is symmetric
//! positive definite whenever `c ≤ 0` (and for small positive `c`). Boundary
//! values are moved to the right-hand side. Grids up to [`BANDED_MAX_N`] nodes
//! per side are factorized with a banded Cholesky decomposition in natural
//! ordering; larger grids fall back to conjugate gradients.

use crate::error::{Error, Result};
use crate::grid::{BoundaryData, Grid, ScalarField};

/// Largest grid side solved by direct factorization.
pub const BANDED_MAX_N: usize = 201;

/// Relative tolerance of the conjugate-gradient fallback.
pub const CG_TOL: f64 = 1e-12;

/// Lower-triangular banded Cholesky factor.
///
/// Row `i` stores columns `i - bw ..= i` at offsets `0 ..= bw`.
#[derive(Debug, Clone)]
pub(crate) struct BandedCholesky {
    dim: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Factorizes the 5-point operator `4 - shift_k` on the diagonal and `-1`
    /// for each grid neighbour, with `m = n - 2` unknowns per row.
    fn factor_stencil(m: usize, shift: Option<&[f64]>) -> Result<Self> {
        Self::factor(m * m, m, |i, j| {
            if i == j {
                4.0 - shift.map_or(0.0, |s| s[i])
            } else if (i - j == 1 && i % m != 0) || i - j == m {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Factorizes the symmetric matrix whose lower band is `entry(i, j)` for
    /// `i - bw <= j <= i`.
    pub(crate) fn factor(dim: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let stride = bw + 1;
        let mut l = vec![0.0; dim * stride];
        for i in 0..dim {
            for j in i.saturating_sub(bw)..=i {
                l[i * stride + j + bw - i] = entry(i, j);
            }
        }
        for i in 0..dim {
            let lo = i.saturating_sub(bw);
            for k in lo..=i {
                // l(i,p) and l(k,p) share the column range lo..k
                let (head, tail) = l.split_at_mut(i * stride);
                let row_i = &mut tail[..stride];
                let dot: f64 = if k == i {
                    let a = &row_i[lo + bw - i..k + bw - i];
                    a.iter().map(|v| v * v).sum()
                } else {
                    let row_k = &head[k * stride..(k + 1) * stride];
                    let a = &row_i[lo + bw - i..k + bw - i];
                    let b = &row_k[lo + bw - k..bw];
                    a.iter().zip(b).map(|(x, y)| x * y).sum()
                };
                let s = row_i[k + bw - i] - dot;
                if k == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::SingularSystem(format!(
                            "nonpositive pivot {s:.3e} at unknown {i}"
                        )));
                    }
                    row_i[bw] = s.sqrt();
                } else {
                    let pivot = head[k * stride + bw];
                    row_i[k + bw - i] = s / pivot;
                }
            }
        }
        Ok(Self { dim, bw, l })
    }

    pub(crate) fn solve_in_place(&self, x: &mut [f64]) {
        let (bw, stride) = (self.bw, self.bw + 1);
        for i in 0..self.dim {
            let lo = i.saturating_sub(bw);
            let row = &self.l[i * stride..(i + 1) * stride];
            let dot: f64 = row[lo + bw - i..bw].iter().zip(&x[lo..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - dot) / row[bw];
        }
        for i in (0..self.dim).rev() {
            let lo = i.saturating_sub(bw);
            let row = &self.l[i * stride..(i + 1) * stride];
            let xi = x[i] / row[bw];
            x[i] = xi;
            for (xp, lp) in x[lo..i].iter_mut().zip(&row[lo + bw - i..bw]) {
                *xp -= lp * xi;
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Banded(BandedCholesky),
    Iterative,
}

/// Assembled interior operator `h²(-Δ - c)` ready for repeated solves.
///
/// Immutable after construction; share across threads to solve many
/// right-hand sides concurrently.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    n: usize,
    /// `h² c` per interior unknown, if a zero-order term is present.
    shift: Option<Vec<f64>>,
    backend: Backend,
}

impl LinearSystem {
    /// Pure Dirichlet Laplacian on an `n × n` node grid.
    pub fn laplacian(n: usize) -> Self {
        let backend = if n <= BANDED_MAX_N {
            Backend::Banded(
                BandedCholesky::factor_stencil(n - 2, None).expect("Dirichlet Laplacian is positive definite"),
            )
        } else {
            Backend::Iterative
        };
        Self { n, shift: None, backend }
    }

    /// Operator `Δ + c`; fails if `-(Δ + c)` is not positive definite.
    pub fn with_coefficient(grid: &Grid, c: &ScalarField) -> Result<Self> {
        c.check_grid(grid)?;
        if !c.is_finite() {
            return Err(Error::NonFinite("zero-order coefficient"));
        }
        let h2 = grid.h() * grid.h();
        let shift: Vec<f64> = (0..grid.interior_count())
            .map(|k| {
                let (i, j) = grid.interior_node(k);
                h2 * c.at(i, j)
            })
            .collect();
        let backend = if grid.n() <= BANDED_MAX_N {
            Backend::Banded(BandedCholesky::factor_stencil(grid.n() - 2, Some(&shift))?)
        } else {
            Backend::Iterative
        };
        Ok(Self { n: grid.n(), shift: Some(shift), backend })
    }

    pub fn dim(&self) -> usize {
        (self.n - 2) * (self.n - 2)
    }

    /// `y = A x` for the scaled interior operator.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        apply_stencil(self.n - 2, self.shift.as_deref(), x, y);
    }

    /// Solves `A x = rhs` for the scaled interior operator.
    pub fn solve_interior(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.dim() {
            return Err(Error::ShapeMismatch { expected: self.dim(), actual: rhs.len() });
        }
        match &self.backend {
            Backend::Banded(chol) => {
                let mut x = rhs.to_vec();
                chol.solve_in_place(&mut x);
                // one step of iterative refinement
                let mut r = vec![0.0; x.len()];
                self.apply(&x, &mut r);
                for (ri, bi) in r.iter_mut().zip(rhs) {
                    *ri = bi - *ri;
                }
                chol.solve_in_place(&mut r);
                for (xi, di) in x.iter_mut().zip(&r) {
                    *xi += di;
                }
                Ok(x)
            }
            Backend::Iterative => {
                let m = self.n - 2;
                let shift = self.shift.as_deref();
                conjugate_gradient(|x, y| apply_stencil(m, shift, x, y), None, rhs, CG_TOL, 20 * self.dim())
            }
        }
    }

    /// Solves `(A_Δ - diag(shift)) x = rhs`, where `A_Δ` is this system's
    /// operator and `shift` is `h² c` per unknown, by conjugate gradients
    /// preconditioned with this system's factorization.
    pub fn solve_shifted(&self, shift: &[f64], rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
        let m = self.n - 2;
        let base = self.shift.as_deref();
        let op = |x: &[f64], y: &mut [f64]| {
            apply_stencil(m, base, x, y);
            for ((yi, xi), si) in y.iter_mut().zip(x).zip(shift) {
                *yi -= si * xi;
            }
        };
        match &self.backend {
            Backend::Banded(chol) => {
                let precond = |r: &[f64], z: &mut [f64]| {
                    z.copy_from_slice(r);
                    chol.solve_in_place(z);
                };
                conjugate_gradient(op, Some(&precond), rhs, tol, 200)
            }
            Backend::Iterative => conjugate_gradient(op, None, rhs, tol.max(CG_TOL), 20 * self.dim()),
        }
    }

    /// Scaled right-hand side `-h² F + (boundary neighbours)` for interior unknowns.
    fn lifted_rhs(&self, grid: &Grid, source: Option<&ScalarField>, bc: &BoundaryData) -> Vec<f64> {
        let h2 = grid.h() * grid.h();
        let mut rhs = vec![0.0; self.dim()];
        for (k, r) in rhs.iter_mut().enumerate() {
            let (i, j) = grid.interior_node(k);
            let mut v = source.map_or(0.0, |f| -h2 * f.at(i, j));
            for (ni, nj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                if grid.is_boundary(ni, nj) {
                    v += bc.values()[grid.boundary_index(ni, nj).unwrap()];
                }
            }
            *r = v;
        }
        rhs
    }

    /// Solves `Δv + c v = F` inside, `v = bc` on the boundary.
    pub fn solve(&self, grid: &Grid, source: Option<&ScalarField>, bc: &BoundaryData) -> Result<ScalarField> {
        if grid.n() != self.n {
            return Err(Error::ShapeMismatch { expected: self.n * self.n, actual: grid.node_count() });
        }
        bc.check_grid(grid)?;
        if let Some(f) = source {
            f.check_grid(grid)?;
            if !f.is_finite() {
                return Err(Error::NonFinite("source"));
            }
        }
        if bc.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("boundary data"));
        }
        let rhs = self.lifted_rhs(grid, source, bc);
        let x = self.solve_interior(&rhs)?;
        Ok(assemble_field(grid, &x, bc))
    }
}

/// Node field from interior unknowns and boundary values.
pub fn assemble_field(grid: &Grid, interior: &[f64], bc: &BoundaryData) -> ScalarField {
    let mut u = ScalarField::zeros(grid);
    for (k, &v) in interior.iter().enumerate() {
        let (i, j) = grid.interior_node(k);
        u.set(i, j, v);
    }
    for (b, &v) in bc.values().iter().enumerate() {
        let (i, j) = grid.boundary_node(b);
        u.set(i, j, v);
    }
    u
}

/// Interior values of a node field, in unknown order.
pub fn interior_values(grid: &Grid, u: &ScalarField) -> Vec<f64> {
    (0..grid.interior_count())
        .map(|k| {
            let (i, j) = grid.interior_node(k);
            u.at(i, j)
        })
        .collect()
}

fn apply_stencil(m: usize, shift: Option<&[f64]>, x: &[f64], y: &mut [f64]) {
    for j in 0..m {
        for i in 0..m {
            let k = j * m + i;
            let mut v = 4.0 * x[k];
            if i > 0 {
                v -= x[k - 1];
            }
            if i + 1 < m {
                v -= x[k + 1];
            }
            if j > 0 {
                v -= x[k - m];
            }
            if j + 1 < m {
                v -= x[k + m];
            }
            if let Some(s) = shift {
                v -= s[k] * x[k];
            }
            y[k] = v;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

type Preconditioner<'a> = &'a dyn Fn(&[f64], &mut [f64]);

/// (Preconditioned) conjugate gradients from a zero initial guess.
///
/// Reports an indefinite operator when a search direction has nonpositive
/// curvature.
fn conjugate_gradient(
    op: impl Fn(&[f64], &mut [f64]),
    precond: Option<Preconditioner>,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let dim = rhs.len();
    let mut x = vec![0.0; dim];
    let b_norm = dot(rhs, rhs).sqrt();
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = rhs.to_vec();
    let mut z = vec![0.0; dim];
    let apply_precond = |r: &[f64], z: &mut [f64]| match precond {
        Some(p) => p(r, z),
        None => z.copy_from_slice(r),
    };
    apply_precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; dim];
    let mut rel = 1.0;
    for _ in 0..max_iter {
        op(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if curvature <= 0.0 || !curvature.is_finite() {
            return Err(Error::SingularSystem(format!(
                "nonpositive curvature {curvature:.3e} in conjugate gradients"
            )));
        }
        let alpha = rz / curvature;
        for k in 0..dim {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= tol {
            return Ok(x);
        }
        apply_precond(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..dim {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::IterativeNonConvergence { iterations: max_iter, residual: rel })
}

/// Solves `Δv + c v = F` inside, `v = bc` on the boundary.
///
/// Without `c` the grid's cached Laplacian factorization is reused.
pub fn solve_dirichlet(
    grid: &Grid,
    source: &ScalarField,
    bc: &BoundaryData,
    c: Option<&ScalarField>,
) -> Result<ScalarField> {
    match c {
        None => grid.laplacian().solve(grid, Some(source), bc),
        Some(c) => LinearSystem::with_coefficient(grid, c)?.solve(grid, Some(source), bc),
    }
}

/// Discrete harmonic extension of boundary data.
pub fn harmonic_extension(grid: &Grid, bc: &BoundaryData) -> Result<ScalarField> {
    grid.laplacian().solve(grid, None, bc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::apply_laplacian;

    fn max_diff(a: &ScalarField, b: &ScalarField) -> f64 {
        a.values().iter().zip(b.values()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn banded_factor_matches_dense_solve() {
        let grid = Grid::new(7).unwrap();
        let sys = LinearSystem::laplacian(7);
        let rhs: Vec<f64> = (0..sys.dim()).map(|k| (k as f64 * 0.37).sin()).collect();
        let x = sys.solve_interior(&rhs).unwrap();
        let mut ax = vec![0.0; x.len()];
        sys.apply(&x, &mut ax);
        for (a, b) in ax.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-13);
        }
        assert_eq!(grid.interior_count(), sys.dim());
    }

    #[test]
    fn reproduces_discrete_harmonic_and_quadratic_fields() {
        let g = Grid::new(21).unwrap();
        let xy = ScalarField::from_fn(&g, |x, y| x * y);
        let v = solve_dirichlet(&g, &ScalarField::zeros(&g), &BoundaryData::trace(&g, &xy), None).unwrap();
        assert!(max_diff(&v, &xy) < 1e-13);
        let quad = ScalarField::from_fn(&g, |x, y| x * x + y * y);
        let v = solve_dirichlet(&g, &ScalarField::constant(&g, 4.0), &BoundaryData::trace(&g, &quad), None).unwrap();
        assert!(max_diff(&v, &quad) < 1e-12);
    }

    #[test]
    fn residual_within_contract() {
        let g = Grid::new(41).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| (3.0 * x).sin() * y + 1.0);
        let bc = BoundaryData::from_fn(&g, |x, y| x - 2.0 * y * y);
        let v = solve_dirichlet(&g, &f, &bc, None).unwrap();
        let lap = apply_laplacian(&g, &v).unwrap();
        let mut worst: f64 = 0.0;
        for j in 1..40 {
            for i in 1..40 {
                worst = worst.max((lap.at(i, j) - f.at(i, j)).abs());
            }
        }
        assert!(worst <= 1e-10 * (f.max_abs() + bc.max_abs()), "residual {worst}");
        assert_eq!(BoundaryData::trace(&g, &v), bc);
    }

    #[test]
    fn coefficient_systems_solve_and_detect_indefiniteness() {
        let g = Grid::new(21).unwrap();
        let c = ScalarField::constant(&g, -3.0);
        let f = ScalarField::from_fn(&g, |x, _| x);
        let bc = BoundaryData::from_fn(&g, |x, y| x + y);
        let v = solve_dirichlet(&g, &f, &bc, Some(&c)).unwrap();
        let lap = apply_laplacian(&g, &v).unwrap();
        for j in 1..20 {
            for i in 1..20 {
                let r = lap.at(i, j) - 3.0 * v.at(i, j) - f.at(i, j);
                assert!(r.abs() < 1e-9);
            }
        }
        // c above the first Dirichlet eigenvalue 2π² makes the system indefinite
        let big = ScalarField::constant(&g, 30.0);
        assert!(matches!(solve_dirichlet(&g, &f, &bc, Some(&big)), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn shifted_pcg_agrees_with_direct_factorization() {
        let g = Grid::new(31).unwrap();
        let c = ScalarField::from_fn(&g, |x, y| 2.0 * x * y);
        let direct = LinearSystem::with_coefficient(&g, &c).unwrap();
        let h2 = g.h() * g.h();
        let shift: Vec<f64> = interior_values(&g, &c).iter().map(|v| h2 * v).collect();
        let rhs: Vec<f64> = (0..direct.dim()).map(|k| ((k % 7) as f64) - 3.0).collect();
        let a = direct.solve_interior(&rhs).unwrap();
        let b = g.laplacian().solve_shifted(&shift, &rhs, 1e-14).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn iterative_backend_matches_banded() {
        let g = Grid::new(25).unwrap();
        let bc = BoundaryData::from_fn(&g, |x, y| (x * 2.0).exp() * (2.0 * y).cos());
        let direct = harmonic_extension(&g, &bc).unwrap();
        let iterative = LinearSystem { n: 25, shift: None, backend: Backend::Iterative };
        let v = iterative.solve(&g, None, &bc).unwrap();
        assert!(max_diff(&direct, &v) < 1e-9);
    }

    #[test]
    fn maximum_principle_and_positivity() {
        let g = Grid::new(33).unwrap();
        let bc = BoundaryData::from_fn(&g, |x, y| if y == 0.0 { (std::f64::consts::PI * x).sin() } else { 0.0 });
        let v = harmonic_extension(&g, &bc).unwrap();
        assert!(v.interior_min() > 0.0);
        assert!(v.interior_max() <= 1.0);
        let ones = harmonic_extension(&g, &BoundaryData::full(&g, vec![1.0; g.boundary_count()]).unwrap()).unwrap();
        assert!(ones.values().iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn rejects_nan_input() {
        let g = Grid::new(9).unwrap();
        let mut vals = vec![0.0; g.boundary_count()];
        vals[2] = f64::NAN;
        assert!(BoundaryData::full(&g, vals).is_err());
        let f = ScalarField::constant(&g, f64::NAN);
        assert!(solve_dirichlet(&g, &f, &BoundaryData::zeros(&g), None).is_err());
    }
}

//! Recovery of `q` from DN data paired with one fixed boundary measure.
//!
//! Two pipelines share the measurement layer:
//!
//! * Fourier mode: products of Calderón exponentials `e^{iζ·x} e^{iη·x} =
//!   e^{ik·x}` turn each second-order measurement into a Fourier moment of
//!   `q Φ`, which is fitted by a cosine series and divided by `Φ`;
//! * moment mode: smooth bumps supported in an arc `Γ` give rows
//!   `∫ q v_i v_j Φ dx`, inverted by Tikhonov regularization with an L-curve
//!   choice of `λ`.
//!
//! Here `Φ = v_3 ⋯ v_m Ψ` collects the auxiliary directions and the measure.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{BoundaryArc, BoundaryData, Grid, ScalarField};
use crate::linear_solve::{harmonic_extension, BandedCholesky};
use crate::linearization::{cascade_oracle, factorial, mixed_difference_dn, LinearizationPlan, DEFAULT_STEP};
use crate::measure::{mollified_point_mass, solve_measure_dirichlet, BoundaryMeasure};
use crate::semilinear::{NewtonParams, DEFAULT_DELTA};

/// Masking threshold for `Φ`, relative to its maximum.
pub const PHI_FLOOR: f64 = 1e-3;

type C2 = [Complex64; 2];

fn dot(a: &C2, b: &C2) -> Complex64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Complex frequencies `ζ, η` with `ζ + η = k` whose exponentials are harmonic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalderonPair {
    pub k: [f64; 2],
    pub zeta: C2,
    pub eta: C2,
}

impl CalderonPair {
    /// `ζ·ζ` (bilinear, no conjugation).
    pub fn zeta_square(&self) -> Complex64 {
        dot(&self.zeta, &self.zeta)
    }

    pub fn eta_square(&self) -> Complex64 {
        dot(&self.eta, &self.eta)
    }
}

/// `ζ = (k + i k⊥)/2`, `η = (k - i k⊥)/2` with `k⊥ = (-k_2, k_1)`.
pub fn calderon_pair(k: [f64; 2]) -> Result<CalderonPair> {
    if k == [0.0, 0.0] {
        return Err(Error::InvalidInput("Calderón pair needs k != 0".into()));
    }
    if !k[0].is_finite() || !k[1].is_finite() {
        return Err(Error::NonFinite("wavevector"));
    }
    let perp = [-k[1], k[0]];
    let zeta = [Complex64::new(k[0], perp[0]) / 2.0, Complex64::new(k[1], perp[1]) / 2.0];
    let eta = [zeta[0].conj(), zeta[1].conj()];
    Ok(CalderonPair { k, zeta, eta })
}

/// `h² Δ_h e^{iξ·x} / e^{iξ·x} = Σ_d 2(cos(ξ_d h) - 1)`.
pub fn discrete_symbol(grid: &Grid, xi: &C2) -> Complex64 {
    let h = grid.h();
    xi.iter().map(|x| 2.0 * ((x * h).cos() - 1.0)).sum()
}

/// Pair `ξ = k/2 ± iτ` whose exponentials are exactly discrete-harmonic on
/// `grid`; `τ → k⊥/2` as `h → 0`.
///
/// Solves `Σ cos(k_d h/2) cosh(τ_d h) = 2`, `Σ sin(k_d h/2) sinh(τ_d h) = 0` by
/// Newton's method from the continuum `τ`.
pub fn discrete_calderon_pair(grid: &Grid, k: [f64; 2]) -> Result<CalderonPair> {
    calderon_pair(k)?;
    let h = grid.h();
    let (c, s) = ([(k[0] * h / 2.0).cos(), (k[1] * h / 2.0).cos()], [(k[0] * h / 2.0).sin(), (k[1] * h / 2.0).sin()]);
    let mut tau = [-k[1] / 2.0, k[0] / 2.0];
    for _ in 0..50 {
        let (ch, sh) = ([(tau[0] * h).cosh(), (tau[1] * h).cosh()], [(tau[0] * h).sinh(), (tau[1] * h).sinh()]);
        let f1 = c[0] * ch[0] + c[1] * ch[1] - 2.0;
        let f2 = s[0] * sh[0] + s[1] * sh[1];
        if f1.abs() <= 4.0 * f64::EPSILON && f2.abs() <= 4.0 * f64::EPSILON {
            break;
        }
        let j = [[h * c[0] * sh[0], h * c[1] * sh[1]], [h * s[0] * ch[0], h * s[1] * ch[1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(Error::SingularSystem(format!("discrete dispersion at k = {k:?}")));
        }
        tau[0] -= (j[1][1] * f1 - j[0][1] * f2) / det;
        tau[1] -= (j[0][0] * f2 - j[1][0] * f1) / det;
    }
    let zeta = [Complex64::new(k[0] / 2.0, tau[0]), Complex64::new(k[1] / 2.0, tau[1])];
    let eta = [zeta[0].conj(), zeta[1].conj()];
    let pair = CalderonPair { k, zeta, eta };
    let scale = 1.0 + (grid.h() * grid.h()) * (k[0] * k[0] + k[1] * k[1]);
    if discrete_symbol(grid, &zeta).norm() > 1e-12 * scale {
        return Err(Error::NonConvergence { iterations: 50, residual: discrete_symbol(grid, &zeta).norm() });
    }
    Ok(pair)
}

/// Complex boundary datum stored as real and imaginary parts.
#[derive(Debug, Clone)]
pub struct ComplexTrace {
    pub re: BoundaryData,
    pub im: BoundaryData,
}

impl ComplexTrace {
    pub fn real(re: BoundaryData) -> Self {
        let im = re.scaled(0.0);
        Self { re, im }
    }

    /// Trace of `e^{iξ·(x - c)}`.
    pub fn exponential(grid: &Grid, xi: &C2, center: (f64, f64)) -> Self {
        let value = |x: f64, y: f64| (Complex64::i() * (xi[0] * (x - center.0) + xi[1] * (y - center.1))).exp();
        Self {
            re: BoundaryData::from_fn(grid, |x, y| value(x, y).re),
            im: BoundaryData::from_fn(grid, |x, y| value(x, y).im),
        }
    }
}

/// A nonnegative bump on the boundary, described independently of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpSpec {
    pub arc: BoundaryArc,
    pub center: f64,
    pub half_width: f64,
    pub height: f64,
}

impl BumpSpec {
    pub fn on(&self, grid: &Grid) -> BoundaryData {
        BoundaryData::bump(grid, &self.arc, self.center, self.half_width, self.height)
    }

    /// Bump of height 1 centred in `arc`, filling it.
    pub fn centered(arc: BoundaryArc) -> Self {
        Self { arc, center: arc.center(), half_width: arc.len() / 2.0, height: 1.0 }
    }
}

/// Boundary measure described independently of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureSpec {
    Point { x0: (f64, f64), sigma: f64 },
    Uniform { density: f64 },
}

impl MeasureSpec {
    pub fn on(&self, grid: &Grid) -> Result<BoundaryMeasure> {
        match *self {
            MeasureSpec::Point { x0, sigma } => mollified_point_mass(grid, x0, sigma),
            MeasureSpec::Uniform { density } => BoundaryMeasure::uniform(grid, density),
        }
    }
}

/// How each order-m derivative is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evaluation {
    /// Nonlinear solves and mixed central differences.
    MixedDifference,
    /// Linearized cascade (exact discrete derivative).
    Cascade,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementParams {
    pub evaluation: Evaluation,
    /// `ε_j ‖h_j‖_∞` for every direction.
    pub step: f64,
    pub richardson: usize,
    pub delta: f64,
    pub newton: NewtonParams,
}

impl Default for MeasurementParams {
    fn default() -> Self {
        Self {
            evaluation: Evaluation::MixedDifference,
            step: DEFAULT_STEP,
            richardson: 1,
            delta: DEFAULT_DELTA,
            newton: NewtonParams::default(),
        }
    }
}

/// Order-m derivative of `∫ Λ_q dμ` along real directions.
fn real_measurement(
    grid: &Grid,
    q: &ScalarField,
    directions: Vec<BoundaryData>,
    measure: &BoundaryMeasure,
    params: &MeasurementParams,
) -> Result<f64> {
    if directions.iter().any(|h| h.max_abs() == 0.0) {
        return Ok(0.0);
    }
    let steps = directions.iter().map(|h| params.step / h.max_abs()).collect();
    let plan = LinearizationPlan::new(grid, q.clone(), directions, measure.clone())?
        .with_delta(params.delta)?
        .with_steps(steps)?
        .with_richardson(params.richardson)
        .with_newton(params.newton);
    match params.evaluation {
        Evaluation::MixedDifference => mixed_difference_dn(&plan),
        Evaluation::Cascade => cascade_oracle(&plan),
    }
}

/// Order-m derivative along `(h_1, h_2, aux…)` with complex `h_1, h_2`,
/// expanded by real multilinearity:
/// `D(a+ib, c+id) = D(a,c) - D(b,d) + i[D(a,d) + D(b,c)]`.
pub fn simulate_measurement(
    grid: &Grid,
    q: &ScalarField,
    h1: &ComplexTrace,
    h2: &ComplexTrace,
    aux: &[BoundaryData],
    measure: &BoundaryMeasure,
    params: &MeasurementParams,
) -> Result<Complex64> {
    let combos = [(&h1.re, &h2.re), (&h1.im, &h2.im), (&h1.re, &h2.im), (&h1.im, &h2.re)];
    let values = combos
        .par_iter()
        .map(|(a, b)| {
            let mut dirs = vec![(*a).clone(), (*b).clone()];
            dirs.extend(aux.iter().cloned());
            real_measurement(grid, q, dirs, measure, params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Complex64::new(values[0] - values[1], values[2] + values[3]))
}

/// `Φ = v_3 ⋯ v_m Ψ`.
pub fn weight_field(grid: &Grid, aux: &[BoundaryData], measure: &BoundaryMeasure) -> Result<ScalarField> {
    let mut phi = solve_measure_dirichlet(grid, measure)?;
    for h in aux {
        phi = phi.mul(&harmonic_extension(grid, h)?);
    }
    Ok(phi)
}

/// Measurement geometry.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementMode {
    /// Calderón pairs on the half lattice `k = π(a, b)`, `|k| <= kmax`,
    /// exponentials centred at `center`.
    Fourier { kmax: f64, center: (f64, f64) },
    /// Bumps on `gamma` and the index pairs measured.
    Moment { gamma: BoundaryArc, basis: Vec<BumpSpec>, pairs: Vec<(usize, usize)> },
}

/// Where measurement values came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub n_data: usize,
    pub evaluation: Evaluation,
    pub step: f64,
    pub richardson: usize,
}

/// Simulated order-m derivatives for one experiment.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub mode: MeasurementMode,
    pub m: usize,
    pub aux: Vec<BumpSpec>,
    pub measure: MeasureSpec,
    /// Lattice points (Fourier) or pair indices (moment), in measurement order.
    pub labels: Vec<[i32; 2]>,
    pub values: Vec<Complex64>,
    pub provenance: Provenance,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Real parts, as measured in moment mode.
    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
}

fn check_aux(m: usize, aux: &[BumpSpec]) -> Result<()> {
    if m < 2 || aux.len() != m - 2 {
        return Err(Error::InvalidInput(format!("order {m} needs {} auxiliary directions, got {}", m.saturating_sub(2), aux.len())));
    }
    if aux.iter().any(|b| !(b.height > 0.0) || !(b.half_width > 0.0)) {
        return Err(Error::InvalidInput("auxiliary directions must be nonnegative and nonzero".into()));
    }
    Ok(())
}

/// Half lattice `(a, b)` with `a > 0` or `a = 0, b >= 0`, and `π²(a² + b²) <= kmax²`.
pub fn half_lattice(kmax: f64) -> Vec<[i32; 2]> {
    let r = (kmax / PI + 1e-9).floor() as i32;
    let mut out = Vec::new();
    for a in 0..=r {
        for b in -r..=r {
            if (a > 0 || b >= 0) && PI * PI * ((a * a + b * b) as f64) <= kmax * kmax * (1.0 + 1e-12) {
                out.push([a, b]);
            }
        }
    }
    out
}

/// Fourier-mode data: one complex measurement per half-lattice point. `k = 0`
/// uses the constant directions `h_1 = h_2 = 1`.
pub fn simulate_fourier_data(
    grid: &Grid,
    q: &ScalarField,
    m: usize,
    kmax: f64,
    aux: &[BumpSpec],
    measure: MeasureSpec,
    params: &MeasurementParams,
) -> Result<MeasurementSet> {
    check_aux(m, aux)?;
    let center = (0.5, 0.5);
    let labels = half_lattice(kmax);
    let aux_data: Vec<BoundaryData> = aux.iter().map(|b| b.on(grid)).collect();
    let mu = measure.on(grid)?;
    let values = labels
        .par_iter()
        .map(|&[a, b]| {
            let (h1, h2) = if a == 0 && b == 0 {
                let one = ComplexTrace::real(BoundaryData::from_fn(grid, |_, _| 1.0));
                (one.clone(), one)
            } else {
                let pair = discrete_calderon_pair(grid, [PI * a as f64, PI * b as f64])?;
                (ComplexTrace::exponential(grid, &pair.zeta, center), ComplexTrace::exponential(grid, &pair.eta, center))
            };
            simulate_measurement(grid, q, &h1, &h2, &aux_data, &mu, params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementSet {
        mode: MeasurementMode::Fourier { kmax, center },
        m,
        aux: aux.to_vec(),
        measure,
        labels,
        values,
        provenance: Provenance {
            n_data: grid.n(),
            evaluation: params.evaluation,
            step: params.step,
            richardson: params.richardson,
        },
    })
}

/// `count` bumps of half-width `half_width`, centres equispaced so that every
/// support lies inside `gamma`.
pub fn bump_basis(gamma: BoundaryArc, count: usize, half_width: f64) -> Result<Vec<BumpSpec>> {
    if count == 0 || gamma.len() <= 2.0 * half_width || gamma.is_full() && half_width <= 0.0 {
        return Err(Error::InvalidInput("empty bump basis on Γ".into()));
    }
    let span = gamma.len() - 2.0 * half_width;
    Ok((0..count)
        .map(|i| {
            let t = if count == 1 { 0.5 } else { i as f64 / (count - 1) as f64 };
            let center = (gamma.start() + half_width + t * span).rem_euclid(crate::grid::PERIMETER);
            BumpSpec { arc: gamma, center, half_width, height: 1.0 }
        })
        .collect())
}

/// `count` pairs `i <= j` spread evenly over all `B(B+1)/2` of them.
pub fn basis_pairs(basis_count: usize, count: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = (0..basis_count).flat_map(|i| (i..basis_count).map(move |j| (i, j))).collect();
    if count >= all.len() {
        return all;
    }
    (0..count).map(|r| all[r * all.len() / count]).collect()
}

/// Moment-mode data: one real measurement per basis pair.
#[allow(clippy::too_many_arguments)]
pub fn simulate_moment_data(
    grid: &Grid,
    q: &ScalarField,
    m: usize,
    basis: &[BumpSpec],
    pairs: &[(usize, usize)],
    aux: &[BumpSpec],
    measure: MeasureSpec,
    params: &MeasurementParams,
) -> Result<MeasurementSet> {
    check_aux(m, aux)?;
    let gamma = basis.first().map(|b| b.arc).ok_or_else(|| Error::InvalidInput("empty bump basis".into()))?;
    let data: Vec<BoundaryData> = basis.iter().map(|b| b.on(grid)).collect();
    let aux_data: Vec<BoundaryData> = aux.iter().map(|b| b.on(grid)).collect();
    let mu = measure.on(grid)?;
    let values = pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut dirs = vec![data[i].clone(), data[j].clone()];
            dirs.extend(aux_data.iter().cloned());
            real_measurement(grid, q, dirs, &mu, params).map(|v| Complex64::new(v, 0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementSet {
        mode: MeasurementMode::Moment { gamma, basis: basis.to_vec(), pairs: pairs.to_vec() },
        m,
        aux: aux.to_vec(),
        measure,
        labels: pairs.iter().map(|&(i, j)| [i as i32, j as i32]).collect(),
        values,
        provenance: Provenance {
            n_data: grid.n(),
            evaluation: params.evaluation,
            step: params.step,
            richardson: params.richardson,
        },
    })
}

/// Outcome of either pipeline on the reconstruction grid.
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub q_rec: ScalarField,
    pub lambda: f64,
    /// `‖A q - b‖₂`.
    pub residual: f64,
    pub rel_l2_error: Option<f64>,
    pub phi: ScalarField,
    /// Nodes where `Φ < PHI_FLOOR · max Φ`.
    pub mask: Vec<bool>,
    pub masked_fraction: f64,
    pub condition: f64,
}

impl ReconstructionResult {
    /// Relative `L²` error over unmasked nodes.
    pub fn error_against(&self, grid: &Grid, q_true: &ScalarField) -> Result<f64> {
        relative_l2_error(grid, &self.q_rec, q_true, Some(&self.mask))
    }
}

/// `‖a - b‖ / ‖b‖` in trapezoidal `L²`, skipping masked nodes.
pub fn relative_l2_error(grid: &Grid, a: &ScalarField, b: &ScalarField, mask: Option<&[bool]>) -> Result<f64> {
    a.check_grid(grid)?;
    b.check_grid(grid)?;
    let n = grid.n();
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..n {
        for i in 0..n {
            if mask.is_some_and(|m| m[grid.node(i, j)]) {
                continue;
            }
            let w = grid.area_weight(i, j);
            num += w * (a.at(i, j) - b.at(i, j)).powi(2);
            den += w * b.at(i, j).powi(2);
        }
    }
    if den == 0.0 {
        return Ok(num.sqrt());
    }
    Ok((num / den).sqrt())
}

fn phi_mask(phi: &ScalarField) -> (Vec<bool>, f64) {
    let max = phi.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mask: Vec<bool> = phi.values().iter().map(|&p| p < PHI_FLOOR * max).collect();
    let frac = mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64;
    (mask, frac)
}

fn interior_positive(grid: &Grid, phi: &ScalarField) -> Result<()> {
    let min = phi.interior_min();
    if !(min > 0.0) {
        return Err(Error::NonPositiveWeight { min });
    }
    phi.check_grid(grid)
}

/// `∫_0^1 cos(π a x) e^{iπ p x} dx`.
fn cosine_moment(a: i32, p: i32) -> Complex64 {
    let exp_integral = |r: i32| {
        if r == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            let sign = if r.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            Complex64::new(sign - 1.0, 0.0) / Complex64::new(0.0, PI * r as f64)
        }
    };
    (exp_integral(p + a) + exp_integral(p - a)) / 2.0
}

/// Representation of `q Φ` in the Fourier-mode fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FourierBasis {
    /// `q Φ = Σ c_ab cos(πa x) cos(πb y)`; moments in closed form.
    Plain,
    /// `q Φ = Φ Σ c_ab cos(πa x) cos(πb y)`; moments by quadrature on the
    /// reconstruction grid, and the division by `Φ` is exact.
    Weighted,
}

/// Fourier-mode inversion: fits `q Φ` over cosine modes with
/// `a² + b² <= (basis_kmax/π)²` to the moments `-b(k)/m!` on the full lattice (the
/// missing half filled by `b(-k) = conj b(k)`), then divides by `Φ`.
pub fn recover_q_fourier(
    grid: &Grid,
    set: &MeasurementSet,
    phi: &ScalarField,
    basis_kind: FourierBasis,
    basis_kmax: f64,
) -> Result<ReconstructionResult> {
    let (kmax, center) = match set.mode {
        MeasurementMode::Fourier { kmax, center } => (kmax, center),
        _ => return Err(Error::InvalidInput("Fourier inversion needs Fourier-mode data".into())),
    };
    interior_positive(grid, phi)?;
    let mf = factorial(set.m);
    let mut rows: Vec<([i32; 2], Complex64)> = Vec::new();
    for (&[a, b], &v) in set.labels.iter().zip(&set.values) {
        rows.push(([a, b], -v / mf));
        if a != 0 || b != 0 {
            rows.push(([-a, -b], (-v / mf).conj()));
        }
    }
    if !(basis_kmax >= 0.0 && basis_kmax <= kmax) {
        return Err(Error::InvalidInput(format!("basis radius {basis_kmax} outside [0, {kmax}]")));
    }
    let r = (basis_kmax / PI + 1e-9).floor() as i32;
    let basis: Vec<[i32; 2]> = (0..=r)
        .flat_map(|a| (0..=r).map(move |b| [a, b]))
        .filter(|&[a, b]| PI * PI * ((a * a + b * b) as f64) <= basis_kmax * basis_kmax * (1.0 + 1e-12))
        .collect();
    let n = grid.n();
    // cos(πa x_i) and e^{iπp (x_i - c)} tables along one axis
    let cos_table = |a: i32| -> Vec<f64> { (0..n).map(|i| (PI * a as f64 * i as f64 * grid.h()).cos()).collect() };
    let exp_table = |p: i32, c: f64| -> Vec<Complex64> {
        (0..n).map(|i| (Complex64::i() * PI * p as f64 * (i as f64 * grid.h() - c)).exp()).collect()
    };
    let design_entry = |[p1, p2]: [i32; 2], [a, b]: [i32; 2]| -> Complex64 {
        match basis_kind {
            FourierBasis::Plain => {
                let shift = (Complex64::i() * -(PI * (p1 as f64 * center.0 + p2 as f64 * center.1))).exp();
                shift * cosine_moment(a, p1) * cosine_moment(b, p2)
            }
            FourierBasis::Weighted => {
                let (ca, cb) = (cos_table(a), cos_table(b));
                let (e1, e2) = (exp_table(p1, center.0), exp_table(p2, center.1));
                let mut sum = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    let mut row = Complex64::new(0.0, 0.0);
                    for i in 0..n {
                        row += grid.area_weight(i, j) * phi.at(i, j) * ca[i] * e1[i];
                    }
                    sum += row * cb[j] * e2[j];
                }
                sum
            }
        }
    };
    let entries: Vec<Complex64> = rows
        .par_iter()
        .flat_map_iter(|&(k, _)| basis.iter().map(move |&ab| design_entry(k, ab)))
        .collect();
    let mut design = DMatrix::<f64>::zeros(2 * rows.len(), basis.len());
    let mut rhs = DVector::<f64>::zeros(2 * rows.len());
    for (row, &(_, value)) in rows.iter().enumerate() {
        for col in 0..basis.len() {
            let g = entries[row * basis.len() + col];
            design[(2 * row, col)] = g.re;
            design[(2 * row + 1, col)] = g.im;
        }
        rhs[2 * row] = value.re;
        rhs[2 * row + 1] = value.im;
    }
    let svd = design.clone().svd(true, true);
    let condition = svd.singular_values.max() / svd.singular_values.min();
    if !(condition < 1e12) {
        return Err(Error::IllConditioned { condition });
    }
    let coeffs = svd.solve(&rhs, 0.0).map_err(|e| Error::SingularSystem(e.to_string()))?;
    let residual = (&design * &coeffs - &rhs).norm();
    let series = ScalarField::from_fn(grid, |x, y| {
        basis
            .iter()
            .zip(coeffs.iter())
            .map(|(&[a, b], c)| c * (PI * a as f64 * x).cos() * (PI * b as f64 * y).cos())
            .sum()
    });
    let (mask, masked_fraction) = phi_mask(phi);
    let mut q_rec = match basis_kind {
        FourierBasis::Plain => series.zip_with(phi, |g, p| g / p),
        FourierBasis::Weighted => series,
    };
    for (v, &m) in q_rec.values_mut().iter_mut().zip(&mask) {
        if m {
            *v = 0.0;
        }
    }
    Ok(ReconstructionResult {
        q_rec,
        lambda: 0.0,
        residual,
        rel_l2_error: None,
        phi: phi.clone(),
        mask,
        masked_fraction,
        condition,
    })
}

/// Linear moment system `A q = b` over all nodes of the reconstruction grid.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub phi: ScalarField,
}

/// Rows `A[r, node] = w_node v_i v_j Φ`, `b[r] = -D_r / m!`, with `v_i` the
/// harmonic extensions of the basis bumps on the reconstruction grid.
pub fn assemble_moment_system(grid: &Grid, set: &MeasurementSet) -> Result<MomentSystem> {
    let (basis, pairs) = match &set.mode {
        MeasurementMode::Moment { basis, pairs, .. } => (basis, pairs),
        _ => return Err(Error::InvalidInput("moment assembly needs moment-mode data".into())),
    };
    if basis.is_empty() || pairs.is_empty() {
        return Err(Error::InvalidInput("empty Γ basis".into()));
    }
    let aux: Vec<BoundaryData> = set.aux.iter().map(|b| b.on(grid)).collect();
    let phi = weight_field(grid, &aux, &set.measure.on(grid)?)?;
    interior_positive(grid, &phi)?;
    let v = basis
        .par_iter()
        .map(|b| harmonic_extension(grid, &b.on(grid)))
        .collect::<Result<Vec<_>>>()?;
    let nodes = grid.node_count();
    let weights: Vec<f64> = (0..nodes)
        .map(|k| {
            let (i, j) = grid.ij(k);
            grid.area_weight(i, j) * phi.values()[k]
        })
        .collect();
    let mut a = DMatrix::<f64>::zeros(pairs.len(), nodes);
    for (r, &(i, j)) in pairs.iter().enumerate() {
        for k in 0..nodes {
            a[(r, k)] = weights[k] * v[i].values()[k] * v[j].values()[k];
        }
    }
    let mf = factorial(set.m);
    let b = DVector::from_iterator(pairs.len(), set.values.iter().map(|v| -v.re / mf));
    Ok(MomentSystem { a, b, phi })
}

/// Penalty `‖L q‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    /// `∫ q²`.
    Identity,
    /// `Σ_edges (q_i - q_j)² + ℓ^{-2} ∫ q²`, the discrete `∫ |∇q|² + ℓ^{-2} q²`
    /// with correlation length `ℓ`.
    Gradient { length: f64 },
}

/// Default correlation length of the gradient penalty.
pub const DEFAULT_LENGTH: f64 = 0.06;

impl Default for Regularizer {
    fn default() -> Self {
        Regularizer::Gradient { length: DEFAULT_LENGTH }
    }
}

/// Tikhonov problem `min ‖A q - b‖² + λ q^T M q` in the kernel form
/// `q = M^{-1} A^T (A M^{-1} A^T + λ)^{-1} b`, with the row-space kernel
/// diagonalized once so that any `λ` costs one small matrix product.
#[derive(Debug, Clone)]
pub struct Tikhonov {
    n: usize,
    /// `M^{-1} A^T`, nodes × rows.
    m_inv_at: DMatrix<f64>,
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
    /// `U^T b`.
    coeffs: DVector<f64>,
    b_norm: f64,
}

impl Tikhonov {
    pub fn new(grid: &Grid, a: &DMatrix<f64>, b: &DVector<f64>, regularizer: Regularizer) -> Result<Self> {
        let n = grid.n();
        let nodes = grid.node_count();
        if a.ncols() != nodes || a.nrows() != b.len() {
            return Err(Error::ShapeMismatch { expected: nodes, actual: a.ncols() });
        }
        let mass: Vec<f64> = (0..nodes)
            .map(|k| {
                let (i, j) = grid.ij(k);
                grid.area_weight(i, j)
            })
            .collect();
        let factor = match regularizer {
            Regularizer::Identity => None,
            Regularizer::Gradient { length } => {
                if !(length > 0.0) {
                    return Err(Error::InvalidInput("correlation length must be positive".into()));
                }
                let degree = |k: usize| {
                    let (i, j) = grid.ij(k);
                    [i > 0, i + 1 < n, j > 0, j + 1 < n].iter().filter(|&&e| e).count() as f64
                };
                Some(BandedCholesky::factor(nodes, n, |r, c| {
                    if r == c {
                        degree(r) + mass[r] / (length * length)
                    } else if (r - c == 1 && r % n != 0) || r - c == n {
                        -1.0
                    } else {
                        0.0
                    }
                })?)
            }
        };
        let rows = a.nrows();
        let columns: Vec<Vec<f64>> = (0..rows)
            .into_par_iter()
            .map(|r| {
                let mut col: Vec<f64> = a.row(r).iter().cloned().collect();
                match &factor {
                    None => col.iter_mut().zip(&mass).for_each(|(v, w)| *v /= w),
                    Some(f) => f.solve_in_place(&mut col),
                }
                col
            })
            .collect();
        let m_inv_at = DMatrix::from_fn(nodes, rows, |k, r| columns[r][k]);
        let kernel = a * &m_inv_at;
        let kernel = (&kernel + kernel.transpose()) * 0.5;
        let eig = SymmetricEigen::new(kernel);
        let coeffs = eig.eigenvectors.transpose() * b;
        debug_assert_eq!(coeffs.len(), rows);
        Ok(Self { n, m_inv_at, eigvecs: eig.eigenvectors, eigvals: eig.eigenvalues, coeffs, b_norm: b.norm() })
    }

    /// Largest eigenvalue of `A M^{-1} A^T`.
    pub fn scale(&self) -> f64 {
        self.eigvals.max().max(0.0)
    }

    /// `(‖A q_λ - b‖, q_λ^T M q_λ)`.
    pub fn curve_point(&self, lambda: f64) -> (f64, f64) {
        let mut res2 = 0.0;
        let mut pen = 0.0;
        for (&s, &c) in self.eigvals.iter().zip(self.coeffs.iter()) {
            let s = s.max(0.0);
            res2 += (lambda * c / (s + lambda)).powi(2);
            pen += s * (c / (s + lambda)).powi(2);
        }
        // components of b outside the eigenbasis (none for a square eigendecomposition)
        let outside = (self.b_norm.powi(2) - self.coeffs.norm_squared()).max(0.0);
        ((res2 + outside).sqrt(), pen)
    }

    pub fn solve(&self, grid: &Grid, lambda: f64) -> Result<ScalarField> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidInput("λ must be positive".into()));
        }
        if grid.n() != self.n {
            return Err(Error::ShapeMismatch { expected: self.n, actual: grid.n() });
        }
        let y_hat = DVector::from_iterator(
            self.coeffs.len(),
            self.eigvals.iter().zip(self.coeffs.iter()).map(|(&s, &c)| c / (s.max(0.0) + lambda)),
        );
        let y = &self.eigvecs * y_hat;
        let q = &self.m_inv_at * y;
        ScalarField::from_values(grid, q.iter().cloned().collect())
    }

    /// `λ` at the maximum-curvature corner of the log-log L-curve over
    /// `points` values spaced logarithmically in `[scale·1e-14, scale]`.
    pub fn l_curve_corner(&self, points: usize) -> f64 {
        let scale = self.scale();
        if scale == 0.0 || points < 5 {
            return 1.0;
        }
        let ts: Vec<f64> = (0..points).map(|i| -14.0 + 14.0 * i as f64 / (points - 1) as f64).collect();
        let curve: Vec<(f64, f64)> = ts
            .iter()
            .map(|t| {
                let (r, p) = self.curve_point(scale * 10f64.powf(*t));
                (r.max(f64::MIN_POSITIVE).ln(), (p.max(f64::MIN_POSITIVE).sqrt()).ln())
            })
            .collect();
        let dt = ts[1] - ts[0];
        let mut best = (f64::NEG_INFINITY, ts[points / 2]);
        for i in 1..points - 1 {
            let (x0, y0) = curve[i - 1];
            let (x1, y1) = curve[i];
            let (x2, y2) = curve[i + 1];
            let (dx, dy) = ((x2 - x0) / (2.0 * dt), (y2 - y0) / (2.0 * dt));
            let (ddx, ddy) = ((x2 - 2.0 * x1 + x0) / (dt * dt), (y2 - 2.0 * y1 + y0) / (dt * dt));
            let speed = (dx * dx + dy * dy).powf(1.5);
            if speed == 0.0 {
                continue;
            }
            let kappa = (dx * ddy - ddx * dy) / speed;
            if kappa > best.0 {
                best = (kappa, ts[i]);
            }
        }
        scale * 10f64.powf(best.1)
    }
}

/// `min ‖A q - b‖² + λ ‖L q‖²` at a fixed `λ`.
pub fn tikhonov_solve(
    grid: &Grid,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: f64,
    regularizer: Regularizer,
) -> Result<ReconstructionResult> {
    let t = Tikhonov::new(grid, a, b, regularizer)?;
    finish_tikhonov(grid, &t, lambda, ScalarField::constant(grid, 1.0))
}

fn finish_tikhonov(grid: &Grid, t: &Tikhonov, lambda: f64, phi: ScalarField) -> Result<ReconstructionResult> {
    let q_rec = t.solve(grid, lambda)?;
    let (residual, _) = t.curve_point(lambda);
    let (mask, masked_fraction) = phi_mask(&phi);
    let smax = t.scale();
    let smin = t.eigvals.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
    Ok(ReconstructionResult {
        q_rec,
        lambda,
        residual,
        rel_l2_error: None,
        phi,
        mask,
        masked_fraction,
        condition: (smax / smin).sqrt(),
    })
}

/// Moment-mode inversion; `lambda = None` selects `λ` on the L-curve.
pub fn recover_q_moment(
    grid: &Grid,
    system: &MomentSystem,
    lambda: Option<f64>,
    regularizer: Regularizer,
) -> Result<ReconstructionResult> {
    let t = Tikhonov::new(grid, &system.a, &system.b, regularizer)?;
    let lambda = lambda.unwrap_or_else(|| t.l_curve_corner(141));
    finish_tikhonov(grid, &t, lambda, system.phi.clone())
}

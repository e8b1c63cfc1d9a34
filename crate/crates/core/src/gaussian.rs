//! Multivariate Gaussian utilities: sampling, sigma points, the unscented
//! transform, chi-squared quantiles and confidence ellipsoids.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::{count, lit, Real};

/// Symmetry tolerance for covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Most negative eigenvalue accepted as positive semidefinite.
pub const PSD_TOL: f64 = 1e-10;
/// Diagonal jitter ladder applied when a factorisation fails.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-9, 1e-6];

/// Draws one standard normal variate as `T`.
#[inline]
pub(crate) fn std_normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    lit(z)
}

/// A multivariate normal distribution `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian<T: Real> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: Real> Gaussian<T> {
    /// Builds a Gaussian after checking symmetry and semidefiniteness.
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        let g = Self { mean, cov };
        g.validate()?;
        Ok(g)
    }

    /// Builds a Gaussian without validation. Hot paths use this after
    /// symmetrising the covariance themselves.
    pub fn new_unchecked(mean: DVector<T>, cov: DMatrix<T>) -> Self {
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.mean.len();
        if self.cov.nrows() != p || self.cov.ncols() != p {
            return Err(Error::InvalidCovariance(format!(
                "covariance is {}x{} for a mean of length {p}",
                self.cov.nrows(),
                self.cov.ncols()
            )));
        }
        if self.mean.iter().chain(self.cov.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidCovariance("non-finite entry".into()));
        }
        let asym = max_asymmetry(&self.cov);
        if asym > lit(SYMMETRY_TOL) {
            return Err(Error::InvalidCovariance(format!("asymmetry {asym}")));
        }
        let min_eig = symmetrize(&self.cov)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(T::max_value().unwrap(), |a, b| a.min(b));
        if p > 0 && min_eig < -lit::<T>(PSD_TOL) {
            return Err(Error::InvalidCovariance(format!("eigenvalue {min_eig}")));
        }
        Ok(())
    }

    /// Lower-triangular factor `L` with `L Lᵀ ≈ cov`.
    pub fn sqrt_factor(&self) -> Result<DMatrix<T>> {
        sqrt_factor(&self.cov)
    }
}

/// Largest absolute difference between `m[(i, j)]` and `m[(j, i)]`.
pub fn max_asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = lit::<T>(0.5);
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Cholesky factorisation that tolerates semidefinite input: a pivot that is
/// zero to working precision yields a zero column instead of a failure.
fn semidefinite_cholesky<T: Real>(a: &DMatrix<T>) -> Option<DMatrix<T>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(T::zero(), |x, y| x.max(y));
    let mut l = DMatrix::<T>::zeros(n, n);
    if scale == T::zero() {
        // all-zero diagonal: PSD only if the whole matrix vanishes
        return if a.iter().all(|x| *x == T::zero()) { Some(l) } else { None };
    }
    let tol = scale * count::<T>(10 * n) * T::default_epsilon();
    let col_tol = (tol * scale).sqrt();
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > tol {
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        } else if d >= -tol {
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > col_tol {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

/// Square-root factor of a covariance with symmetrisation and the jitter
/// ladder `0, 1e-12, 1e-9, 1e-6`.
pub fn sqrt_factor<T: Real>(cov: &DMatrix<T>) -> Result<DMatrix<T>> {
    let sym = symmetrize(cov);
    for jitter in JITTER_LADDER {
        let mut m = sym.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += lit(jitter);
            }
        }
        if let Some(l) = semidefinite_cholesky(&m) {
            return Ok(l);
        }
    }
    Err(Error::SingularCovariance)
}

/// Spread parameters of the scaled unscented transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtParams<T: Real> {
    pub alpha: T,
    pub beta: T,
    pub kappa: T,
}

impl<T: Real> Default for UtParams<T> {
    fn default() -> Self {
        Self { alpha: lit(1e-3), beta: lit(2.0), kappa: T::zero() }
    }
}

/// `2p + 1` deterministic sample points with their mean and covariance
/// weights. `offsets[i] = points[i] - center` is kept exactly so that
/// symmetric pairs cancel without rounding.
#[derive(Debug, Clone)]
pub struct SigmaPointSet<T: Real> {
    pub center: DVector<T>,
    pub points: Vec<DVector<T>>,
    pub offsets: Vec<DVector<T>>,
    pub weights_mean: Vec<T>,
    pub weights_cov: Vec<T>,
    pub params: UtParams<T>,
}

impl<T: Real> SigmaPointSet<T> {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Weighted mean of the points, summing mirrored offsets pairwise.
    pub fn weighted_mean(&self) -> DVector<T> {
        let p = self.dim();
        let mut acc = DVector::<T>::zeros(p);
        for i in 1..=p {
            let pair = &self.offsets[i] * self.weights_mean[i] + &self.offsets[i + p] * self.weights_mean[i + p];
            acc += pair;
        }
        &self.center + acc
    }

    /// Weighted covariance of the points about [`Self::weighted_mean`].
    pub fn weighted_cov(&self) -> DMatrix<T> {
        let p = self.dim();
        let mut cov = DMatrix::<T>::zeros(p, p);
        for i in 1..self.points.len() {
            let e = &self.offsets[i];
            cov += e * e.transpose() * self.weights_cov[i];
        }
        symmetrize(&cov)
    }
}

/// Sigma points of `g` with the default spread parameters.
pub fn sigma_points<T: Real>(g: &Gaussian<T>) -> Result<SigmaPointSet<T>> {
    sigma_points_with(g, UtParams::default())
}

pub fn sigma_points_with<T: Real>(g: &Gaussian<T>, params: UtParams<T>) -> Result<SigmaPointSet<T>> {
    let p = g.dim();
    let n = count::<T>(p);
    let lambda = params.alpha * params.alpha * (n + params.kappa) - n;
    let spread = (n + lambda).sqrt();
    let l = g.sqrt_factor()?;

    let w0 = lambda / (n + lambda);
    let wi = T::one() / (lit::<T>(2.0) * (n + lambda));
    let mut weights_mean = vec![wi; 2 * p + 1];
    let mut weights_cov = vec![wi; 2 * p + 1];
    weights_mean[0] = w0;
    weights_cov[0] = w0 + T::one() - params.alpha * params.alpha + params.beta;

    let mut offsets = Vec::with_capacity(2 * p + 1);
    offsets.push(DVector::zeros(p));
    for j in 0..p {
        offsets.push(l.column(j) * spread);
    }
    for j in 0..p {
        offsets.push(-(l.column(j) * spread));
    }
    let points = offsets.iter().map(|e| &g.mean + e).collect();
    Ok(SigmaPointSet { center: g.mean.clone(), points, offsets, weights_mean, weights_cov, params })
}

/// Images of the sigma points under a map, with the recovered moments.
#[derive(Debug, Clone)]
pub struct Propagated<T: Real> {
    pub images: Vec<DVector<T>>,
    /// `images[i] - images[0]`
    pub deltas: Vec<DVector<T>>,
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

/// Pushes sigma points through `f` and recovers mean and covariance.
///
/// Moments are accumulated relative to the image of the central point,
/// which avoids the large cancelling central weight of small-`alpha`
/// parameterisations.
pub fn propagate<T, F>(s: &SigmaPointSet<T>, mut f: F) -> Propagated<T>
where
    T: Real,
    F: FnMut(&DVector<T>) -> DVector<T>,
{
    let images: Vec<DVector<T>> = s.points.iter().map(&mut f).collect();
    let q = images[0].len();
    let deltas: Vec<DVector<T>> = images.iter().map(|y| y - &images[0]).collect();

    let mut shift = DVector::<T>::zeros(q);
    let mut pull = DVector::<T>::zeros(q);
    let mut wc_total = s.weights_cov[0];
    let mut cov = DMatrix::<T>::zeros(q, q);
    for i in 1..images.len() {
        let d = &deltas[i];
        shift += d * s.weights_mean[i];
        pull += d * s.weights_cov[i];
        wc_total += s.weights_cov[i];
        cov += d * d.transpose() * s.weights_cov[i];
    }
    cov -= &pull * shift.transpose() + &shift * pull.transpose();
    cov += &shift * shift.transpose() * wc_total;
    let mean = &images[0] + &shift;
    Propagated { images, deltas, mean, cov: symmetrize(&cov) }
}

/// Unscented transform of the distribution behind `s` through `f`.
pub fn unscented_transform<T, F>(s: &SigmaPointSet<T>, f: F) -> Gaussian<T>
where
    T: Real,
    F: FnMut(&DVector<T>) -> DVector<T>,
{
    let out = propagate(s, f);
    Gaussian::new_unchecked(out.mean, out.cov)
}

/// Cross covariance between the source variable and a propagated image.
pub fn cross_covariance<T: Real>(s: &SigmaPointSet<T>, y: &Propagated<T>) -> DMatrix<T> {
    let p = s.dim();
    let q = y.mean.len();
    let shift = &y.mean - &y.images[0];
    let mut out = DMatrix::<T>::zeros(p, q);
    for i in 1..s.points.len() {
        let dy = &y.deltas[i] - &shift;
        out += &s.offsets[i] * dy.transpose() * s.weights_cov[i];
    }
    out
}

// ---------------------------------------------------------------------------
// chi-squared distribution

fn ln_gamma_half_integer(two_a: u32) -> f64 {
    // Γ(a) for a = two_a / 2 by the recurrence Γ(a + 1) = a Γ(a).
    let (mut a, mut ln) = if two_a.is_multiple_of(2) { (1.0, 0.0) } else { (0.5, 0.5 * std::f64::consts::PI.ln()) };
    let target = f64::from(two_a) / 2.0;
    while a < target {
        ln += a.ln();
        a += 1.0;
    }
    ln
}

/// Regularised lower incomplete gamma `P(a, x)` for half-integer `a`.
fn lower_gamma_regularized(two_a: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = f64::from(two_a) / 2.0;
    let ln_prefactor = -x + a * x.ln() - ln_gamma_half_integer(two_a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = 1.0;
        while term.abs() > sum.abs() * 1e-17 && n < 10_000.0 {
            term *= x / (a + n);
            sum += term;
            n += 1.0;
        }
        (sum * ln_prefactor.exp()).min(1.0)
    } else {
        // Lentz continued fraction for the upper tail Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (1.0 - ln_prefactor.exp() * h).max(0.0)
    }
}

/// CDF of the chi-squared distribution with `dof` degrees of freedom.
pub fn chi2_cdf(dof: u32, x: f64) -> f64 {
    lower_gamma_regularized(dof, x / 2.0)
}

/// Inverse CDF of the chi-squared distribution, by bisection.
pub fn chi2_quantile(dof: u32, confidence: f64) -> Result<f64> {
    if !(1..=64).contains(&dof) {
        return Err(Error::Domain(format!("chi-squared dof {dof} outside 1..=64")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!("confidence {confidence} outside (0, 1)")));
    }
    let mut lo = 0.0_f64;
    let mut hi = f64::from(dof).max(1.0);
    while chi2_cdf(dof, hi) < confidence {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_cdf(dof, mid) < confidence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// confidence ellipsoids

/// Ellipsoid `{ c + Σ sᵢ zᵢ aᵢ : ‖z‖ ≤ 1 }` with orthonormal axes `aᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid<T: Real> {
    pub center: DVector<T>,
    /// Columns are the unit axis directions.
    pub axes: DMatrix<T>,
    pub semi_axis_lengths: DVector<T>,
}

impl<T: Real> Ellipsoid<T> {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Squared normalised radius of `x`. Directions with a zero semi-axis
    /// contribute `+∞` unless `x` lies in the hyperplane to within `tol`.
    pub fn radius_sq(&self, x: &DVector<T>, tol: T) -> T {
        let local = self.axes.transpose() * (x - &self.center);
        let mut r = T::zero();
        for (coord, s) in local.iter().zip(self.semi_axis_lengths.iter()) {
            if *s > T::zero() {
                r += (*coord / *s) * (*coord / *s);
            } else if coord.abs() > tol {
                return T::max_value().unwrap();
            }
        }
        r
    }

    pub fn contains(&self, x: &DVector<T>, tol: T) -> bool {
        self.radius_sq(x, tol) <= T::one() + tol
    }

    /// Largest semi-axis length.
    pub fn max_semi_axis(&self) -> T {
        self.semi_axis_lengths.iter().copied().fold(T::zero(), |a, b| a.max(b))
    }
}

/// Region containing a draw of `g` with probability `1 - alpha`:
/// `(x - μ)ᵀ Σ⁻¹ (x - μ) ≤ χ²_p(1 - alpha)`.
pub fn confidence_ellipsoid<T: Real>(g: &Gaussian<T>, alpha: T) -> Result<Ellipsoid<T>> {
    let a = alpha.as_f64();
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("significance {a} outside (0, 1)")));
    }
    let p = g.dim();
    let q: T = lit(chi2_quantile(p as u32, 1.0 - a)?);
    let eig = SymmetricEigen::new(symmetrize(&g.cov));
    let mut lengths = DVector::<T>::zeros(p);
    for i in 0..p {
        let lambda = eig.eigenvalues[i];
        if lambda < -lit::<T>(PSD_TOL) {
            return Err(Error::InvalidCovariance(format!("eigenvalue {lambda}")));
        }
        lengths[i] = (lambda.max(T::zero()) * q).sqrt();
    }
    Ok(Ellipsoid { center: g.mean.clone(), axes: eig.eigenvectors, semi_axis_lengths: lengths })
}

/// Uniform draw from the unit ball in `p` dimensions.
pub fn sample_unit_ball<T: Real, R: Rng + ?Sized>(p: usize, rng: &mut R) -> DVector<T> {
    loop {
        let z = DVector::<T>::from_fn(p, |_, _| std_normal(rng));
        let norm = z.norm();
        if norm > T::zero() {
            let u: f64 = rng.random();
            let radius: T = lit(u.powf(1.0 / p as f64));
            return z * (radius / norm);
        }
    }
}

/// `n` uniform samples from the interior of `e`.
pub fn sample_in_ellipsoid<T: Real, R: Rng + ?Sized>(e: &Ellipsoid<T>, n: usize, rng: &mut R) -> Vec<DVector<T>> {
    let p = e.dim();
    let scaled = &e.axes * DMatrix::from_diagonal(&e.semi_axis_lengths);
    (0..n).map(|_| &e.center + &scaled * sample_unit_ball::<T, R>(p, rng)).collect()
}

/// One draw from `g`.
pub fn sample_mvn<T: Real, R: Rng + ?Sized>(g: &Gaussian<T>, rng: &mut R) -> Result<DVector<T>> {
    let l = g.sqrt_factor()?;
    Ok(sample_mvn_with_factor(&g.mean, &l, rng))
}

/// Draw from `N(mean, L Lᵀ)` with a precomputed factor.
pub fn sample_mvn_with_factor<T: Real, R: Rng + ?Sized>(mean: &DVector<T>, l: &DMatrix<T>, rng: &mut R) -> DVector<T> {
    let z = DVector::<T>::from_fn(mean.len(), |_, _| std_normal(rng));
    mean + l * z
}

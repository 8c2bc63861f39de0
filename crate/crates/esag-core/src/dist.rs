//! The ESAG distribution core.
//!
//! An angular Gaussian variable is Y = W/|W| with W ~ N_d(mu, V). The
//! elliptically symmetric subfamily (ESAG) imposes V mu = mu and
//! det(V) = 1, which removes the scale non-identifiability while keeping
//! anisotropy. This module realizes the constraints by construction:
//!
//! ```text
//! V = xi xi^T + E exp(S(gamma)) E^T,   xi = mu/|mu|,
//! ```
//!
//! where E is a deterministic orthonormal basis of the complement of xi
//! and S(gamma) is the symmetric traceless (d-1)x(d-1) matrix packed
//! from the constraint-free shape vector gamma of length (d-2)(d+1)/2.
//! Then V xi = xi, det V = exp(tr S) = 1, and gamma = 0 gives V = I
//! exactly. The density in this parameterization is
//!
//! ```text
//! log f(y) = -((d-1)/2) log(2 pi) - (d/2) log q
//!            + (alpha^2 - |mu|^2)/2 + log M_{d-1}(alpha),
//! q = y^T V^{-1} y,   alpha = y^T mu / sqrt(q),
//! ```
//!
//! with M_k(a) = (2 pi)^{-1/2} Int_0^inf t^k exp(-(t-a)^2/2) dt, the
//! radial moment of a unit-variance normal.

use crate::error::{EsagError, Result};
use crate::linalg;
use crate::special::{mills_ratio, normal_cdf, normal_pdf, LN_2PI, SQRT_2PI};
use rand::Rng;
use rand_distr::StandardNormal;

/// Tolerance for accepting a vector as unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// Mean norms below this are rejected as degenerate (mu/|mu| undefined).
pub const MIN_MU_NORM: f64 = 1e-250;

/// Below this value of alpha the moment recursion switches to the
/// Mills-ratio branch; at -6 the double-precision normal cdf is ~1e-9
/// and forward recursion starts losing digits to cancellation.
pub const MNORM_MILLS_THRESHOLD: f64 = -6.0;

/// Sampled Gaussian vectors with norm below this are redrawn.
pub const MIN_W_NORM: f64 = 1e-300;

/// Hard cap on the ambient dimension (stack buffers in the hot paths).
pub const MAX_DIM: usize = 16;

/// Dimension of the constraint-free shape vector gamma for ambient
/// dimension `d`: (d-2)(d+1)/2.
pub fn gamma_dim(d: usize) -> Result<usize> {
    if d < 3 {
        return Err(EsagError::DimensionTooSmall(d));
    }
    Ok((d - 2) * (d + 1) / 2)
}

/// A point on the unit hypersphere S^{d-1}, d >= 3.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Validates dimension and unit norm (within [`UNIT_NORM_TOL`]).
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 3 {
            return Err(EsagError::DimensionTooSmall(coords.len()));
        }
        let nrm = linalg::norm(&coords);
        if (nrm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(EsagError::NotUnitNorm(nrm));
        }
        Ok(Self(coords))
    }

    /// Normalizes `coords` onto the sphere first; rejects near-zero input.
    pub fn normalized(mut coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 3 {
            return Err(EsagError::DimensionTooSmall(coords.len()));
        }
        let nrm = linalg::norm(&coords);
        if nrm < MIN_W_NORM {
            return Err(EsagError::DegenerateMean(nrm));
        }
        coords.iter_mut().for_each(|x| *x /= nrm);
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Eigen-factorized ESAG covariance.
///
/// `eigenvalues` follows the convention that the first d-1 entries are
/// the complement-space eigenvalues sorted ascending and the last entry
/// is the eigenvalue 1 belonging to the mean direction.
#[derive(Debug, Clone)]
pub struct CovarianceFactorization {
    d: usize,
    /// V, row-major d x d.
    pub v: Vec<f64>,
    /// V^{-1}, row-major d x d.
    pub vinv: Vec<f64>,
    /// Symmetric square root V^{1/2}, row-major d x d.
    pub vhalf: Vec<f64>,
    /// lambda_1 <= ... <= lambda_{d-1}, then lambda_d = 1.
    pub eigenvalues: Vec<f64>,
}

impl CovarianceFactorization {
    pub fn dim(&self) -> usize {
        self.d
    }
}

/// Precomputed spectral pieces of one ESAG parameter point.
///
/// Owns every buffer it needs so it can be rebuilt in place inside
/// optimizer loops without allocating.
#[derive(Debug, Clone)]
pub(crate) struct Factor {
    pub d: usize,
    pub mu_norm: f64,
    /// Unit mean direction xi.
    pub xi: Vec<f64>,
    /// Householder vector u = xi + sign(xi_d) e_d (never degenerate).
    hh_u: Vec<f64>,
    /// 2 / (u^T u).
    hh_beta: f64,
    /// Fast path: gamma identically zero, V = I.
    pub isotropic: bool,
    /// Eigenvalues of S (unsorted), length d-1 when anisotropic.
    pub s_eigvals: Vec<f64>,
    /// Eigenvectors of S as columns, (d-1)^2 row-major.
    s_eigvecs: Vec<f64>,
    /// Scratch for packing S / running Jacobi.
    s_work: Vec<f64>,
}

impl Factor {
    pub fn with_dim(d: usize) -> Self {
        let m = d - 1;
        Factor {
            d,
            mu_norm: 0.0,
            xi: vec![0.0; d],
            hh_u: vec![0.0; d],
            hh_beta: 0.0,
            isotropic: true,
            s_eigvals: vec![0.0; m],
            s_eigvecs: vec![0.0; m * m],
            s_work: vec![0.0; m * m],
        }
    }

    pub fn new(mu: &[f64], gamma: &[f64]) -> Result<Self> {
        let mut f = Factor::with_dim(mu.len());
        f.rebuild(mu, gamma)?;
        Ok(f)
    }

    /// Recompute everything for a new (mu, gamma), reusing buffers.
    pub fn rebuild(&mut self, mu: &[f64], gamma: &[f64]) -> Result<()> {
        let d = self.d;
        if mu.len() != d {
            return Err(EsagError::DimensionMismatch {
                what: "mu",
                expected: d,
                got: mu.len(),
            });
        }
        if d < 3 {
            return Err(EsagError::DimensionTooSmall(d));
        }
        if d > MAX_DIM {
            return Err(EsagError::InvalidArgument(format!(
                "ambient dimension {d} exceeds supported maximum {MAX_DIM}"
            )));
        }
        let p_gamma = (d - 2) * (d + 1) / 2;
        if gamma.len() != p_gamma {
            return Err(EsagError::DimensionMismatch {
                what: "gamma",
                expected: p_gamma,
                got: gamma.len(),
            });
        }
        let nrm = linalg::norm(mu);
        if !(nrm > MIN_MU_NORM) || !nrm.is_finite() {
            return Err(EsagError::DegenerateMean(nrm));
        }
        self.mu_norm = nrm;
        for (xi, &m) in self.xi.iter_mut().zip(mu) {
            *xi = m / nrm;
        }
        // Householder u = xi + s e_d with s = sign(xi_d) (sign(0) = +1):
        // u^T u = 2 (1 + |xi_d|) >= 2, so the reflector is never close to
        // degenerate. H = I - (2/u^T u) u u^T maps e_d to -s*xi; its first
        // d-1 columns are an orthonormal basis of the complement of xi.
        let sign = if self.xi[d - 1] >= 0.0 { 1.0 } else { -1.0 };
        self.hh_u.copy_from_slice(&self.xi);
        self.hh_u[d - 1] += sign;
        self.hh_beta = 2.0 / linalg::dot(&self.hh_u, &self.hh_u);

        self.isotropic = gamma.iter().all(|&g| g == 0.0);
        if !self.isotropic {
            let m = d - 1;
            pack_shape_matrix(gamma, m, &mut self.s_work);
            sym_eigen_small(&mut self.s_work, &mut self.s_eigvals, &mut self.s_eigvecs, m);
        }
        Ok(())
    }

    /// Applies the reflector H to `x`, writing the full image into `out`.
    /// The first d-1 entries of `out` are E^T x.
    #[inline]
    fn reflect(&self, x: &[f64], out: &mut [f64]) {
        let c = self.hh_beta * linalg::dot(&self.hh_u, x);
        for i in 0..self.d {
            out[i] = x[i] - c * self.hh_u[i];
        }
    }

    /// E w for w in the complement coordinates (length d-1).
    #[inline]
    fn complement_to_ambient(&self, w: &[f64], out: &mut [f64]) {
        let d = self.d;
        let mut dot = 0.0;
        for i in 0..d - 1 {
            dot += self.hh_u[i] * w[i];
        }
        let c = self.hh_beta * dot;
        for i in 0..d - 1 {
            out[i] = w[i] - c * self.hh_u[i];
        }
        out[d - 1] = -c * self.hh_u[d - 1];
    }

    /// Log density at a point on the sphere (no validation).
    pub fn log_density(&self, y: &[f64]) -> f64 {
        let d = self.d;
        debug_assert_eq!(y.len(), d);
        let t = linalg::dot(&self.xi, y);
        let q = if self.isotropic {
            linalg::dot(y, y)
        } else {
            let m = d - 1;
            let mut h = [0.0f64; MAX_DIM];
            self.reflect(y, &mut h[..d]);
            // w = U^T z with z = E^T y; q = t^2 + sum_j w_j^2 e^{-s_j}
            let mut q = t * t;
            for j in 0..m {
                let mut wj = 0.0;
                for i in 0..m {
                    wj += self.s_eigvecs[i * m + j] * h[i];
                }
                q += wj * wj * (-self.s_eigvals[j]).exp();
            }
            q
        };
        let alpha = self.mu_norm * t / q.sqrt();
        -0.5 * (d as f64 - 1.0) * LN_2PI - 0.5 * d as f64 * q.ln()
            + 0.5 * (alpha * alpha - self.mu_norm * self.mu_norm)
            + log_mnorm_moment(d - 1, alpha)
    }

    /// Draw one normalized sample into `out` (length d).
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.d;
        debug_assert_eq!(out.len(), d);
        let mut z = [0.0f64; MAX_DIM];
        loop {
            for zi in z[..d].iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            if self.isotropic {
                for i in 0..d {
                    out[i] = self.mu_norm * self.xi[i] + z[i];
                }
            } else {
                let m = d - 1;
                let t = linalg::dot(&self.xi, &z[..d]);
                let mut h = [0.0f64; MAX_DIM];
                self.reflect(&z[..d], &mut h[..d]);
                // v = exp(S/2) E^T z in the eigenbasis of S
                let mut w = [0.0f64; MAX_DIM];
                for j in 0..m {
                    let mut wj = 0.0;
                    for i in 0..m {
                        wj += self.s_eigvecs[i * m + j] * h[i];
                    }
                    w[j] = wj * (0.5 * self.s_eigvals[j]).exp();
                }
                let mut back = [0.0f64; MAX_DIM];
                for i in 0..m {
                    let mut acc = 0.0;
                    for j in 0..m {
                        acc += self.s_eigvecs[i * m + j] * w[j];
                    }
                    back[i] = acc;
                }
                let mut amb = [0.0f64; MAX_DIM];
                self.complement_to_ambient(&back[..m], &mut amb[..d]);
                for i in 0..d {
                    out[i] = self.mu_norm * self.xi[i] + t * self.xi[i] + amb[i];
                }
            }
            let nrm = linalg::norm(out);
            if nrm >= MIN_W_NORM {
                for o in out.iter_mut() {
                    *o /= nrm;
                }
                return;
            }
        }
    }

    /// Derived covariance matrices and eigenvalues.
    pub fn covariance(&self) -> CovarianceFactorization {
        let d = self.d;
        if self.isotropic {
            let mut id = vec![0.0; d * d];
            for i in 0..d {
                id[i * d + i] = 1.0;
            }
            let mut eig = vec![1.0; d];
            eig[d - 1] = 1.0;
            return CovarianceFactorization {
                d,
                v: id.clone(),
                vinv: id.clone(),
                vhalf: id,
                eigenvalues: eig,
            };
        }
        let m = d - 1;
        // Ambient-space eigenvectors of V: b_j = E u_j (u_j = j-th
        // eigenvector of S), plus xi with eigenvalue 1.
        let mut basis = vec![0.0; m * d]; // row j holds b_j
        let mut col = [0.0f64; MAX_DIM];
        let mut amb = [0.0f64; MAX_DIM];
        for j in 0..m {
            for i in 0..m {
                col[i] = self.s_eigvecs[i * m + j];
            }
            self.complement_to_ambient(&col[..m], &mut amb[..d]);
            basis[j * d..(j + 1) * d].copy_from_slice(&amb[..d]);
        }
        let build = |scale: &dyn Fn(f64) -> f64| -> Vec<f64> {
            let mut out = vec![0.0; d * d];
            for i in 0..d {
                for k in 0..d {
                    let mut acc = self.xi[i] * self.xi[k];
                    for j in 0..m {
                        acc += scale(self.s_eigvals[j]) * basis[j * d + i] * basis[j * d + k];
                    }
                    out[i * d + k] = acc;
                }
            }
            out
        };
        let v = build(&|s| s.exp());
        let vinv = build(&|s| (-s).exp());
        let vhalf = build(&|s| (0.5 * s).exp());
        let mut eigenvalues: Vec<f64> = self.s_eigvals.iter().map(|&s| s.exp()).collect();
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
        eigenvalues.push(1.0);
        CovarianceFactorization {
            d,
            v,
            vinv,
            vhalf,
            eigenvalues,
        }
    }
}

/// Pack gamma into the symmetric traceless S, row-major m x m.
///
/// The first m-1 entries fill the diagonal (last diagonal entry is the
/// negated sum, enforcing trace zero); the remaining m(m-1)/2 entries
/// fill the strict upper triangle row by row.
fn pack_shape_matrix(gamma: &[f64], m: usize, s: &mut [f64]) {
    debug_assert_eq!(gamma.len(), m * (m + 1) / 2 - 1);
    debug_assert_eq!(s.len(), m * m);
    let mut diag_sum = 0.0;
    for i in 0..m - 1 {
        s[i * m + i] = gamma[i];
        diag_sum += gamma[i];
    }
    s[(m - 1) * m + (m - 1)] = -diag_sum;
    let mut idx = m - 1;
    for i in 0..m {
        for j in (i + 1)..m {
            s[i * m + j] = gamma[idx];
            s[j * m + i] = gamma[idx];
            idx += 1;
        }
    }
}

/// Eigendecomposition for the small shape matrix; `a` is destroyed.
fn sym_eigen_small(a: &mut [f64], vals: &mut [f64], vecs: &mut [f64], m: usize) {
    if m == 2 {
        // closed form for [[a, b], [b, c]]
        let (p, b, c) = (a[0], a[1], a[3]);
        if b == 0.0 {
            vals[0] = p;
            vals[1] = c;
            vecs.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
            return;
        }
        let half_tr = 0.5 * (p + c);
        let half_diff = 0.5 * (p - c);
        let disc = half_diff.hypot(b);
        vals[0] = half_tr - disc;
        vals[1] = half_tr + disc;
        let (vx, vy) = if half_diff >= 0.0 {
            (half_diff + disc, b)
        } else {
            (b, disc - half_diff)
        };
        let nrm = vx.hypot(vy);
        let (vx, vy) = (vx / nrm, vy / nrm);
        // columns: [vec(lo) | vec(hi)]
        vecs[0] = -vy;
        vecs[1] = vx;
        vecs[2] = vx;
        vecs[3] = vy;
    } else {
        linalg::jacobi_sym(a, vecs, m, linalg::JACOBI_TOL, linalg::JACOBI_MAX_SWEEPS);
        for i in 0..m {
            vals[i] = a[i * m + i];
        }
    }
}

/// Deterministic orthonormal complement of the mean direction.
///
/// Returns E as a row-major d x (d-1) matrix whose columns are
/// orthonormal and orthogonal to mu. E depends only on mu/|mu| and is
/// built from a single Householder reflector with the non-cancelling
/// sign choice; columns are negated when sign(xi_d) = -1 so that
/// mu = e_d maps to the identity columns exactly.
pub fn complement_basis(mu: &[f64]) -> Result<Vec<f64>> {
    let d = mu.len();
    if d < 3 {
        return Err(EsagError::DimensionTooSmall(d));
    }
    let nrm = linalg::norm(mu);
    if !(nrm > MIN_MU_NORM) || !nrm.is_finite() {
        return Err(EsagError::DegenerateMean(nrm));
    }
    let xi: Vec<f64> = mu.iter().map(|&x| x / nrm).collect();
    let sign = if xi[d - 1] >= 0.0 { 1.0 } else { -1.0 };
    let mut u = xi;
    u[d - 1] += sign;
    let beta = 2.0 / linalg::dot(&u, &u);
    let flip = if sign < 0.0 { -1.0 } else { 1.0 };
    let mut e = vec![0.0; d * (d - 1)];
    for i in 0..d {
        for j in 0..d - 1 {
            let hij = (if i == j { 1.0 } else { 0.0 }) - beta * u[i] * u[j];
            e[i * (d - 1) + j] = flip * hij;
        }
    }
    Ok(e)
}

/// Full ESAG parameter point: mean vector, shape vector, and the derived
/// covariance factorization.
#[derive(Debug, Clone)]
pub struct EsagParams {
    mu: Vec<f64>,
    gamma: Vec<f64>,
    cov: CovarianceFactorization,
    factor: Factor,
}

impl EsagParams {
    pub fn new(mu: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let factor = Factor::new(&mu, &gamma)?;
        let cov = factor.covariance();
        Ok(EsagParams {
            mu,
            gamma,
            cov,
            factor,
        })
    }

    /// Isotropic parameters (gamma = 0).
    pub fn isotropic(mu: Vec<f64>) -> Result<Self> {
        let p = gamma_dim(mu.len())?;
        EsagParams::new(mu, vec![0.0; p])
    }

    pub fn dim(&self) -> usize {
        self.factor.d
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn mu_norm(&self) -> f64 {
        self.factor.mu_norm
    }

    pub fn mean_direction(&self) -> &[f64] {
        &self.factor.xi
    }

    pub fn cov(&self) -> &CovarianceFactorization {
        &self.cov
    }

    pub(crate) fn factor(&self) -> &Factor {
        &self.factor
    }

    /// Log density at `y`.
    pub fn log_density(&self, y: &UnitVector) -> Result<f64> {
        if y.dim() != self.dim() {
            return Err(EsagError::DimensionMismatch {
                what: "y",
                expected: self.dim(),
                got: y.dim(),
            });
        }
        Ok(self.factor.log_density(y.coords()))
    }

    /// Log density for a raw coordinate slice (no unit-norm validation).
    pub fn log_density_raw(&self, y: &[f64]) -> f64 {
        assert_eq!(y.len(), self.dim(), "dimension mismatch");
        self.factor.log_density(y)
    }

    /// Draw `n` samples.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<UnitVector> {
        let d = self.dim();
        let mut out = Vec::with_capacity(n);
        let mut buf = vec![0.0; d];
        for _ in 0..n {
            self.factor.sample_one(rng, &mut buf);
            out.push(UnitVector(buf.clone()));
        }
        out
    }

    /// Draw one sample into a caller-provided buffer.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        assert_eq!(out.len(), self.dim(), "dimension mismatch");
        self.factor.sample_one(rng, out);
    }
}

/// Covariance factorization from (mu, gamma); the public constructor
/// behind [`EsagParams`].
pub fn covariance_from(mu: &[f64], gamma: &[f64]) -> Result<CovarianceFactorization> {
    Ok(Factor::new(mu, gamma)?.covariance())
}

/// Radial moment M_k(alpha) = (2 pi)^{-1/2} Int_0^inf t^k e^{-(t-alpha)^2/2} dt.
///
/// Forward recursion M_{k+1} = alpha M_k + k M_{k-1} from M_0 = Phi,
/// M_1 = alpha Phi + phi; for alpha below the Mills threshold the same
/// recursion is evaluated on the scaled quantities I_k = M_k/phi by a
/// backward (Miller) pass normalized with the continued-fraction Mills
/// ratio, which avoids the cancellation of the forward direction.
pub fn mnorm_moment(k: usize, alpha: f64) -> f64 {
    if alpha >= MNORM_MILLS_THRESHOLD {
        let m0 = normal_cdf(alpha);
        if k == 0 {
            return m0;
        }
        let mut prev = m0;
        let mut curr = alpha * m0 + normal_pdf(alpha);
        for j in 1..k {
            let next = alpha * curr + j as f64 * prev;
            prev = curr;
            curr = next;
        }
        curr
    } else {
        log_mnorm_moment(k, alpha).exp()
    }
}

/// log M_k(alpha); stays finite far into the lower tail where the value
/// itself underflows.
pub fn log_mnorm_moment(k: usize, alpha: f64) -> f64 {
    if alpha >= MNORM_MILLS_THRESHOLD {
        return mnorm_moment_forward_log(k, alpha);
    }
    let x = -alpha;
    // Miller backward recursion for I_k(x) = M_k(-x)/phi(x): the
    // downward direction I_{j-1} = (I_{j+1} + x I_j)/j is all-additive.
    let top = k + 32;
    let mut above = 0.0f64;
    let mut here = 1e-280f64;
    let mut at_k = 0.0f64;
    for j in (1..=top).rev() {
        let below = (above + x * here) / j as f64;
        above = here;
        here = below;
        if j - 1 == k {
            at_k = here;
        }
        if here > 1e250 {
            above *= 1e-250;
            here *= 1e-250;
            at_k *= 1e-250;
        }
    }
    let scale = mills_ratio(x) / here;
    -0.5 * x * x - SQRT_2PI.ln() + (at_k * scale).ln()
}

fn mnorm_moment_forward_log(k: usize, alpha: f64) -> f64 {
    let m0 = normal_cdf(alpha);
    if k == 0 {
        return m0.ln();
    }
    let mut prev = m0;
    let mut curr = alpha * m0 + normal_pdf(alpha);
    for j in 1..k {
        let next = alpha * curr + j as f64 * prev;
        prev = curr;
        curr = next;
    }
    curr.ln()
}

/// Log density of ESAG(mu, gamma) at y (free-function form).
pub fn log_density(y: &UnitVector, params: &EsagParams) -> Result<f64> {
    params.log_density(y)
}

/// Draw n samples from ESAG(mu, gamma) (free-function form).
pub fn sample<R: Rng + ?Sized>(params: &EsagParams, n: usize, rng: &mut R) -> Vec<UnitVector> {
    params.sample(n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::substream;

    fn max_abs(xs: &[f64]) -> f64 {
        xs.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
    }

    #[test]
    fn gamma_dim_formula() {
        assert_eq!(gamma_dim(3).unwrap(), 2);
        assert_eq!(gamma_dim(4).unwrap(), 5);
        assert_eq!(gamma_dim(5).unwrap(), 9);
        assert!(matches!(gamma_dim(2), Err(EsagError::DimensionTooSmall(2))));
    }

    #[test]
    fn complement_basis_identity_at_pole() {
        let e = complement_basis(&[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(e, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn complement_basis_contracts() {
        let mut rng = substream(11, &[0]);
        for d in 3..=6usize {
            for _ in 0..20 {
                let mu: Vec<f64> = (0..d)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0)
                    .collect();
                if linalg::norm(&mu) < 1e-3 {
                    continue;
                }
                let e = complement_basis(&mu).unwrap();
                // E^T E = I
                for a in 0..d - 1 {
                    for b in 0..d - 1 {
                        let mut acc = 0.0;
                        for i in 0..d {
                            acc += e[i * (d - 1) + a] * e[i * (d - 1) + b];
                        }
                        let want = if a == b { 1.0 } else { 0.0 };
                        assert!((acc - want).abs() <= 1e-12, "EtE dev {}", acc - want);
                    }
                }
                // E^T mu = 0
                for a in 0..d - 1 {
                    let mut acc = 0.0;
                    for i in 0..d {
                        acc += e[i * (d - 1) + a] * mu[i];
                    }
                    assert!(acc.abs() <= 1e-12 * linalg::norm(&mu));
                }
                // scale invariance is bitwise for an exact power of two
                let mu2: Vec<f64> = mu.iter().map(|&x| 2.0 * x).collect();
                assert_eq!(e, complement_basis(&mu2).unwrap());
            }
        }
    }

    #[test]
    fn zero_mu_rejected() {
        assert!(matches!(
            complement_basis(&[0.0, 0.0, 0.0]),
            Err(EsagError::DegenerateMean(_))
        ));
        assert!(EsagParams::isotropic(vec![0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn covariance_identity_at_zero_gamma() {
        let cov = covariance_from(&[1.0, -2.0, 0.5], &[0.0, 0.0]).unwrap();
        assert_eq!(linalg::max_dev_from_identity(&cov.v, 3), 0.0);
        assert_eq!(cov.eigenvalues, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn covariance_d3_diagonal_gamma() {
        // gamma = (g, 0) packs S = diag(g, -g); V eigenvalues {e^g, e^-g, 1}.
        let g = 0.7;
        let cov = covariance_from(&[0.3, -0.4, 1.1], &[g, 0.0]).unwrap();
        // oracle: eigenvalues of the 2x2 block from the generic solver
        let (oracle, _) = linalg::sym_eigen(&[g, 0.0, 0.0, -g], 2);
        let want = [oracle[0].exp(), oracle[1].exp()];
        assert!((cov.eigenvalues[0] - want[0]).abs() < 1e-12);
        assert!((cov.eigenvalues[1] - want[1]).abs() < 1e-12);
        assert_eq!(cov.eigenvalues[2], 1.0);
    }

    #[test]
    fn covariance_constraints_random() {
        let mut rng = substream(12, &[0]);
        for d in 3..=5usize {
            let p = gamma_dim(d).unwrap();
            for _ in 0..30 {
                let mu: Vec<f64> = (0..d)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * 4.0)
                    .collect();
                if linalg::norm(&mu) < 1e-2 {
                    continue;
                }
                let gamma: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let cov = covariance_from(&mu, &gamma).unwrap();
                // V mu = mu
                let mut vmu = vec![0.0; d];
                linalg::matvec(&cov.v, d, d, &mu, &mut vmu);
                let resid: Vec<f64> = vmu.iter().zip(&mu).map(|(a, b)| a - b).collect();
                assert!(max_abs(&resid) <= 1e-10 * linalg::norm(&mu));
                // det V = prod eigenvalues = 1
                let det: f64 = cov.eigenvalues.iter().product();
                assert!((det - 1.0).abs() <= 1e-8);
                // V Vinv = I, Vhalf^2 = V
                let mut prod = vec![0.0; d * d];
                linalg::matmul(&cov.v, &cov.vinv, d, d, d, &mut prod);
                assert!(linalg::max_dev_from_identity(&prod, d) <= 1e-10);
                let mut half2 = vec![0.0; d * d];
                linalg::matmul(&cov.vhalf, &cov.vhalf, d, d, d, &mut half2);
                let dev = half2
                    .iter()
                    .zip(&cov.v)
                    .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                assert!(dev <= 1e-10);
                // symmetry
                for i in 0..d {
                    for j in 0..d {
                        assert!((cov.v[i * d + j] - cov.v[j * d + i]).abs() <= 1e-12);
                    }
                }
                // all eigenvalues positive
                assert!(cov.eigenvalues.iter().all(|&l| l > 0.0));
            }
        }
    }

    #[test]
    fn mnorm_anchors() {
        assert_eq!(mnorm_moment(0, 0.0), 0.5);
        assert!((mnorm_moment(1, 0.0) - 1.0 / SQRT_2PI).abs() < 1e-15);
        assert!((mnorm_moment(2, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mnorm_log_consistent_across_branches() {
        // the two branches must agree in a band around the threshold
        for k in 0..=5usize {
            for &a in &[-5.0, -5.9, -6.1, -7.0] {
                let forward = mnorm_moment_forward_log(k, a);
                let log_val = log_mnorm_moment(k, a);
                assert!(
                    (forward - log_val).abs() < 1e-7,
                    "k={k} a={a}: {forward} vs {log_val}"
                );
            }
        }
    }

    #[test]
    fn density_uniform_limit_on_orthogonal_circle() {
        // gamma = 0 and y orthogonal to mu: alpha = 0 exactly, so the
        // density equals (2 pi)^{-1} M_2(0) e^{-|mu|^2/2} -> 1/(4 pi).
        let mu = vec![0.0, 0.0, 1e-6];
        let params = EsagParams::isotropic(mu).unwrap();
        let uniform = 1.0 / (4.0 * std::f64::consts::PI);
        for k in 0..20 {
            let th = k as f64 * 0.3141;
            let y = UnitVector::new(vec![th.cos(), th.sin(), 0.0]).unwrap();
            let f = params.log_density(&y).unwrap().exp();
            assert!(
                ((f - uniform) / uniform).abs() < 1e-6,
                "dev {}",
                (f - uniform) / uniform
            );
        }
    }

    #[test]
    fn density_rotation_equivariant_when_isotropic() {
        let mu = vec![1.0, 2.0, -0.5];
        let params = EsagParams::isotropic(mu.clone()).unwrap();
        // rotate both y and mu by a Givens rotation in the (0,1) plane
        let (c, s) = (0.6, 0.8);
        let rot = |v: &[f64]| vec![c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]];
        let params_rot = EsagParams::isotropic(rot(&mu)).unwrap();
        let mut rng = substream(5, &[1]);
        for _ in 0..50 {
            let y = {
                let mut v: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
                let n = linalg::norm(&v);
                v.iter_mut().for_each(|x| *x /= n);
                v
            };
            let f0 = params.log_density_raw(&y);
            let f1 = params_rot.log_density_raw(&rot(&y));
            assert!((f0 - f1).abs() < 1e-10);
        }
    }

    #[test]
    fn samples_are_unit_norm_and_deterministic() {
        let params =
            EsagParams::new(vec![1.0, -1.0, 2.0, 0.5], vec![0.4, -0.2, 0.3, 0.1, -0.5]).unwrap();
        let a = params.sample(100, &mut substream(99, &[3]));
        let b = params.sample(100, &mut substream(99, &[3]));
        for (ya, yb) in a.iter().zip(&b) {
            assert_eq!(ya.coords(), yb.coords());
            assert!((linalg::norm(ya.coords()) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn concentrated_sample_mean_direction() {
        // gamma = 0, |mu| = 50: the sample mean direction is within
        // 0.01 rad of mu/|mu| long before n = 1e5; use 2e4 here.
        let mu: Vec<f64> = vec![30.0, 40.0, 0.0];
        let scale = 50.0 / linalg::norm(&mu);
        let mu: Vec<f64> = mu.iter().map(|&x| x * scale).collect();
        let params = EsagParams::isotropic(mu.clone()).unwrap();
        let mut rng = substream(7, &[0]);
        let mut mean = vec![0.0; 3];
        let mut buf = vec![0.0; 3];
        let n = 20_000;
        for _ in 0..n {
            params.sample_into(&mut rng, &mut buf);
            linalg::axpy(1.0, &buf, &mut mean);
        }
        mean.iter_mut().for_each(|x| *x /= n as f64);
        let cosang = linalg::dot(&mean, &params.mean_direction()) / linalg::norm(&mean);
        assert!(cosang.min(1.0).acos() < 0.01, "angle {}", cosang.acos());
    }
}

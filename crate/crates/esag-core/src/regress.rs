//! Conditional ESAG regression.
//!
//! The model is Y | X ~ ESAG(mu = alpha0 + A1 X, gamma = beta0 + B1 X)
//! with covariates standardized onto [1, 2] by the affine map
//! x -> (x - min)/range + 1. Fitting maximizes the log likelihood over
//! whichever coefficient blocks a [`NullSpec`] leaves free; frozen
//! blocks stay exactly zero, which is how the null hypotheses
//! (isotropy, intercept-only mu, intercept-only gamma, per-covariate
//! exclusions) are encoded.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dist::{gamma_dim, EsagParams, Factor, UnitVector};
use crate::error::{EsagError, Result};
use crate::linalg;
use crate::optim::{maximize, OptimizerConfig};

/// Fitted mean norms below this floor make the log likelihood return
/// the -inf sentinel (the mean direction would be undefined).
pub const MU_NORM_FLOOR: f64 = 1e-8;

/// Affine standardization of one covariate column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateScale {
    pub min: f64,
    pub range: f64,
}

impl CovariateScale {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / self.range + 1.0
    }

    /// True when `x` lies outside the training range.
    #[inline]
    pub fn extrapolates(&self, x: f64) -> bool {
        x < self.min || x > self.min + self.range
    }
}

/// Standardize raw covariates (flat row-major n x q) column by column.
///
/// Column k maps x -> (x - min_k)/range_k + 1, so every standardized
/// value lies in [1, 2] with the observed extremes at the endpoints.
pub fn standardize_covariates(raw: &[f64], n: usize, q: usize) -> Result<(Vec<f64>, Vec<CovariateScale>)> {
    if raw.len() != n * q {
        return Err(EsagError::DimensionMismatch {
            what: "covariates",
            expected: n * q,
            got: raw.len(),
        });
    }
    let mut scales = Vec::with_capacity(q);
    for k in 0..q {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for i in 0..n {
            let x = raw[i * q + k];
            if !x.is_finite() {
                return Err(EsagError::InvalidArgument(format!(
                    "covariate column {k} contains a non-finite value"
                )));
            }
            min = min.min(x);
            max = max.max(x);
        }
        let range = max - min;
        if !(range > 0.0) {
            return Err(EsagError::ZeroRangeColumn(k));
        }
        scales.push(CovariateScale { min, range });
    }
    let mut out = vec![0.0; n * q];
    for i in 0..n {
        for k in 0..q {
            out[i * q + k] = scales[k].apply(raw[i * q + k]);
        }
    }
    Ok((out, scales))
}

/// Directional responses with (standardized) covariates.
#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    d: usize,
    q: usize,
    responses: Vec<f64>,
    covariates: Vec<f64>,
    scales: Option<Vec<CovariateScale>>,
}

impl Dataset {
    /// Build a dataset whose covariates are already standardized (pass
    /// the record so prediction inputs can reuse the same map).
    pub fn new(
        responses: Vec<UnitVector>,
        covariates: Vec<f64>,
        q: usize,
        scales: Option<Vec<CovariateScale>>,
    ) -> Result<Self> {
        if responses.is_empty() {
            return Err(EsagError::DegenerateData("empty dataset".into()));
        }
        let d = responses[0].dim();
        let n = responses.len();
        let mut flat = Vec::with_capacity(n * d);
        for y in &responses {
            if y.dim() != d {
                return Err(EsagError::DimensionMismatch {
                    what: "response",
                    expected: d,
                    got: y.dim(),
                });
            }
            flat.extend_from_slice(y.coords());
        }
        if covariates.len() != n * q {
            return Err(EsagError::DimensionMismatch {
                what: "covariates",
                expected: n * q,
                got: covariates.len(),
            });
        }
        if let Some(s) = &scales {
            if s.len() != q {
                return Err(EsagError::DimensionMismatch {
                    what: "standardization record",
                    expected: q,
                    got: s.len(),
                });
            }
        }
        Ok(Dataset {
            n,
            d,
            q,
            responses: flat,
            covariates,
            scales,
        })
    }

    /// Build from responses and raw covariates, standardizing them.
    pub fn standardizing(responses: Vec<UnitVector>, raw_covariates: Vec<f64>, q: usize) -> Result<Self> {
        let n = responses.len();
        let (std_cov, scales) = standardize_covariates(&raw_covariates, n, q)?;
        Dataset::new(responses, std_cov, q, Some(scales))
    }

    /// Responses only (q = 0).
    pub fn intercept_only(responses: Vec<UnitVector>) -> Result<Self> {
        Dataset::new(responses, vec![], 0, None)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_covariates(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn response(&self, i: usize) -> &[f64] {
        &self.responses[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.q..(i + 1) * self.q]
    }

    pub fn scales(&self) -> Option<&[CovariateScale]> {
        self.scales.as_deref()
    }

    /// Replace the responses, keeping covariates and record (used by the
    /// parametric bootstrap, which holds X fixed).
    pub fn with_responses(&self, responses: &[f64]) -> Result<Self> {
        if responses.len() != self.n * self.d {
            return Err(EsagError::DimensionMismatch {
                what: "responses",
                expected: self.n * self.d,
                got: responses.len(),
            });
        }
        Ok(Dataset {
            n: self.n,
            d: self.d,
            q: self.q,
            responses: responses.to_vec(),
            covariates: self.covariates.clone(),
            scales: self.scales.clone(),
        })
    }

    /// Row-resampled copy (nonparametric bootstrap: (Y_i, X_i) pairs).
    pub fn resample_rows(&self, rows: &[usize]) -> Self {
        let mut responses = Vec::with_capacity(rows.len() * self.d);
        let mut covariates = Vec::with_capacity(rows.len() * self.q);
        for &r in rows {
            responses.extend_from_slice(self.response(r));
            covariates.extend_from_slice(self.covariate_row(r));
        }
        Dataset {
            n: rows.len(),
            d: self.d,
            q: self.q,
            responses,
            covariates,
            scales: self.scales.clone(),
        }
    }
}

/// Regression coefficients (alpha0, A1, beta0, B1).
///
/// `a1` is d x q row-major (column k is the effect of covariate k on
/// mu); `b1` is p_gamma x q row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCoefficients {
    pub d: usize,
    pub q: usize,
    pub alpha0: Vec<f64>,
    pub a1: Vec<f64>,
    pub beta0: Vec<f64>,
    pub b1: Vec<f64>,
}

impl RegressionCoefficients {
    pub fn zeros(d: usize, q: usize) -> Result<Self> {
        let p = gamma_dim(d)?;
        Ok(RegressionCoefficients {
            d,
            q,
            alpha0: vec![0.0; d],
            a1: vec![0.0; d * q],
            beta0: vec![0.0; p],
            b1: vec![0.0; p * q],
        })
    }

    pub fn p_gamma(&self) -> usize {
        self.beta0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = gamma_dim(self.d)?;
        let checks = [
            ("alpha0", self.alpha0.len(), self.d),
            ("a1", self.a1.len(), self.d * self.q),
            ("beta0", self.beta0.len(), p),
            ("b1", self.b1.len(), p * self.q),
        ];
        for (what, got, expected) in checks {
            if got != expected {
                return Err(EsagError::DimensionMismatch {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    /// mu(x) = alpha0 + A1 x into `out`.
    #[inline]
    pub fn mu_at(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.q);
        out.copy_from_slice(&self.alpha0);
        for i in 0..self.d {
            let row = &self.a1[i * self.q..(i + 1) * self.q];
            out[i] += linalg::dot(row, x);
        }
    }

    /// gamma(x) = beta0 + B1 x into `out`.
    #[inline]
    pub fn gamma_at(&self, x: &[f64], out: &mut [f64]) {
        let p = self.beta0.len();
        debug_assert_eq!(x.len(), self.q);
        out.copy_from_slice(&self.beta0);
        for i in 0..p {
            let row = &self.b1[i * self.q..(i + 1) * self.q];
            out[i] += linalg::dot(row, x);
        }
    }
}

/// A restriction descriptor freezing coefficient blocks to zero.
///
/// Freezing `beta0` and `b1` together encodes the isotropy null
/// (gamma = 0); freezing `a1` encodes intercept-only mu; freezing `b1`
/// alone encodes intercept-only gamma; the column sets encode
/// per-covariate exclusions alpha_k = 0 / beta_k = 0.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NullSpec {
    pub freeze_a1: bool,
    pub freeze_b1: bool,
    pub freeze_beta0: bool,
    pub frozen_alpha_columns: BTreeSet<usize>,
    pub frozen_beta_columns: BTreeSet<usize>,
}

impl NullSpec {
    /// The saturated model: nothing frozen.
    pub fn unrestricted() -> Self {
        NullSpec::default()
    }

    /// H0: gamma identically zero (isotropy).
    pub fn isotropy() -> Self {
        NullSpec {
            freeze_b1: true,
            freeze_beta0: true,
            ..NullSpec::default()
        }
    }

    /// H0: mu = alpha0 (no covariate effect on the mean direction).
    pub fn mu_intercept_only() -> Self {
        NullSpec {
            freeze_a1: true,
            ..NullSpec::default()
        }
    }

    /// H0: gamma = beta0 (no covariate effect on the shape).
    pub fn gamma_intercept_only() -> Self {
        NullSpec {
            freeze_b1: true,
            ..NullSpec::default()
        }
    }

    /// Freeze the effect of covariate `k` on mu (alpha_k = 0).
    pub fn with_frozen_alpha_column(mut self, k: usize) -> Self {
        self.frozen_alpha_columns.insert(k);
        self
    }

    /// Freeze the effect of covariate `k` on gamma (beta_k = 0).
    pub fn with_frozen_beta_column(mut self, k: usize) -> Self {
        self.frozen_beta_columns.insert(k);
        self
    }

    pub fn alpha_column_frozen(&self, k: usize) -> bool {
        self.freeze_a1 || self.frozen_alpha_columns.contains(&k)
    }

    pub fn beta_column_frozen(&self, k: usize) -> bool {
        self.freeze_b1 || self.frozen_beta_columns.contains(&k)
    }

    /// True when the restriction forces gamma(x) = 0 for all x.
    pub fn forces_isotropy(&self) -> bool {
        self.freeze_beta0 && self.freeze_b1
    }

    /// Frozen-scalar mask in a fixed order, used for nesting checks.
    fn frozen_mask(&self, q: usize) -> Vec<bool> {
        let mut mask = Vec::with_capacity(1 + q + 1 + q);
        mask.push(false); // alpha0 never frozen
        for k in 0..q {
            mask.push(self.alpha_column_frozen(k));
        }
        mask.push(self.freeze_beta0);
        for k in 0..q {
            mask.push(self.beta_column_frozen(k));
        }
        mask
    }

    /// `self` (the null) is strictly nested in `alt` when everything
    /// frozen by `alt` is frozen by `self`, and `self` freezes more.
    pub fn is_strictly_nested_in(&self, alt: &NullSpec, q: usize) -> bool {
        let me = self.frozen_mask(q);
        let other = alt.frozen_mask(q);
        let mut extra = false;
        for (m, o) in me.iter().zip(&other) {
            if *o && !*m {
                return false;
            }
            if *m && !*o {
                extra = true;
            }
        }
        extra
    }

    /// Zero every frozen block of `coeffs` in place.
    pub fn enforce(&self, coeffs: &mut RegressionCoefficients) {
        let q = coeffs.q;
        for k in 0..q {
            if self.alpha_column_frozen(k) {
                for i in 0..coeffs.d {
                    coeffs.a1[i * q + k] = 0.0;
                }
            }
            if self.beta_column_frozen(k) {
                for i in 0..coeffs.p_gamma() {
                    coeffs.b1[i * q + k] = 0.0;
                }
            }
        }
        if self.freeze_beta0 {
            coeffs.beta0.fill(0.0);
        }
    }

    /// Number of free scalar parameters for ambient dimension d.
    pub fn n_free(&self, d: usize, q: usize) -> Result<usize> {
        let p = gamma_dim(d)?;
        let mut n = d;
        for k in 0..q {
            if !self.alpha_column_frozen(k) {
                n += d;
            }
        }
        if !self.freeze_beta0 {
            n += p;
        }
        for k in 0..q {
            if !self.beta_column_frozen(k) {
                n += p;
            }
        }
        Ok(n)
    }
}

/// Pack the free blocks of `coeffs` into a flat optimizer vector.
fn pack(coeffs: &RegressionCoefficients, spec: &NullSpec) -> Vec<f64> {
    let (d, q, p) = (coeffs.d, coeffs.q, coeffs.p_gamma());
    let mut x = Vec::new();
    x.extend_from_slice(&coeffs.alpha0);
    for k in 0..q {
        if !spec.alpha_column_frozen(k) {
            for i in 0..d {
                x.push(coeffs.a1[i * q + k]);
            }
        }
    }
    if !spec.freeze_beta0 {
        x.extend_from_slice(&coeffs.beta0);
    }
    for k in 0..q {
        if !spec.beta_column_frozen(k) {
            for i in 0..p {
                x.push(coeffs.b1[i * q + k]);
            }
        }
    }
    x
}

/// Scatter a flat optimizer vector back into coefficients (frozen
/// blocks are zeroed).
fn unpack_into(x: &[f64], spec: &NullSpec, coeffs: &mut RegressionCoefficients) {
    let (d, q, p) = (coeffs.d, coeffs.q, coeffs.p_gamma());
    let mut idx = 0;
    coeffs.alpha0.copy_from_slice(&x[..d]);
    idx += d;
    for k in 0..q {
        if !spec.alpha_column_frozen(k) {
            for i in 0..d {
                coeffs.a1[i * q + k] = x[idx];
                idx += 1;
            }
        } else {
            for i in 0..d {
                coeffs.a1[i * q + k] = 0.0;
            }
        }
    }
    if !spec.freeze_beta0 {
        coeffs.beta0.copy_from_slice(&x[idx..idx + p]);
        idx += p;
    } else {
        coeffs.beta0.fill(0.0);
    }
    for k in 0..q {
        if !spec.beta_column_frozen(k) {
            for i in 0..p {
                coeffs.b1[i * q + k] = x[idx];
                idx += 1;
            }
        } else {
            for i in 0..p {
                coeffs.b1[i * q + k] = 0.0;
            }
        }
    }
    debug_assert_eq!(idx, x.len());
}

/// Reusable buffers for repeated log-likelihood evaluation.
pub struct LoglikWorkspace {
    factor: Factor,
    mu: Vec<f64>,
    gamma: Vec<f64>,
}

impl LoglikWorkspace {
    pub fn new(d: usize) -> Result<Self> {
        if d < 3 {
            return Err(EsagError::DimensionTooSmall(d));
        }
        Ok(LoglikWorkspace {
            factor: Factor::with_dim(d),
            mu: vec![0.0; d],
            gamma: vec![0.0; gamma_dim(d)?],
        })
    }
}

/// Sum of per-observation log densities under the conditional model.
///
/// Returns -inf when any per-observation mean norm falls below
/// [`MU_NORM_FLOOR`] (or is non-finite), so optimizers stay total.
pub fn loglik_with(coeffs: &RegressionCoefficients, data: &Dataset, ws: &mut LoglikWorkspace) -> f64 {
    let n = data.n();
    if data.n_covariates() == 0 {
        let nrm = linalg::norm(&coeffs.alpha0);
        if !nrm.is_finite() || nrm < MU_NORM_FLOOR {
            return f64::NEG_INFINITY;
        }
        if ws.factor.rebuild(&coeffs.alpha0, &coeffs.beta0).is_err() {
            return f64::NEG_INFINITY;
        }
        let mut acc = 0.0;
        for i in 0..n {
            acc += ws.factor.log_density(data.response(i));
        }
        return acc;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let x = data.covariate_row(i);
        coeffs.mu_at(x, &mut ws.mu);
        coeffs.gamma_at(x, &mut ws.gamma);
        let nrm = linalg::norm(&ws.mu);
        if !nrm.is_finite() || nrm < MU_NORM_FLOOR {
            return f64::NEG_INFINITY;
        }
        if ws.factor.rebuild(&ws.mu, &ws.gamma).is_err() {
            return f64::NEG_INFINITY;
        }
        acc += ws.factor.log_density(data.response(i));
    }
    acc
}

/// Allocation-per-call convenience wrapper around [`loglik_with`].
pub fn loglik(coeffs: &RegressionCoefficients, data: &Dataset) -> Result<f64> {
    coeffs.validate()?;
    if coeffs.d != data.dim() || coeffs.q != data.n_covariates() {
        return Err(EsagError::DimensionMismatch {
            what: "coefficients",
            expected: data.dim(),
            got: coeffs.d,
        });
    }
    let mut ws = LoglikWorkspace::new(data.dim())?;
    Ok(loglik_with(coeffs, data, &mut ws))
}

/// Moment-based starting point: alpha0 = c ybar/|ybar| with the
/// standard concentration heuristic c = |ybar|(d - |ybar|^2)/(1 - |ybar|^2),
/// floored at 0.1; every other block starts at zero.
pub fn init_coefficients(data: &Dataset, spec: &NullSpec) -> Result<RegressionCoefficients> {
    let (n, d, q) = (data.n(), data.dim(), data.n_covariates());
    if n < d {
        return Err(EsagError::DegenerateData(format!(
            "need at least d = {d} observations to initialize, got {n}"
        )));
    }
    let mut ybar = vec![0.0; d];
    for i in 0..n {
        linalg::axpy(1.0, data.response(i), &mut ybar);
    }
    ybar.iter_mut().for_each(|x| *x /= n as f64);
    let r = linalg::norm(&ybar);
    if r >= 1.0 - 1e-12 {
        return Err(EsagError::DegenerateData(
            "all responses are identical; the concentration heuristic diverges".into(),
        ));
    }
    let dir: Vec<f64> = if r > 1e-12 {
        ybar.iter().map(|&x| x / r).collect()
    } else {
        let mut e1 = vec![0.0; d];
        e1[0] = 1.0;
        e1
    };
    let c = (r * (d as f64 - r * r) / (1.0 - r * r)).max(0.1);
    let mut coeffs = RegressionCoefficients::zeros(d, q)?;
    for (a, &v) in coeffs.alpha0.iter_mut().zip(&dir) {
        *a = c * v;
    }
    spec.enforce(&mut coeffs);
    Ok(coeffs)
}

/// Maximum-likelihood fit under the restriction `spec`.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: RegressionCoefficients,
    /// The restriction this fit was computed under.
    pub spec: NullSpec,
    pub loglik: f64,
    pub converged: bool,
    /// Objective evaluations spent by the optimizer.
    pub iterations: usize,
    /// Number of free scalar parameters.
    pub n_free: usize,
    /// Set when n is below the free-parameter count (the fit proceeds).
    pub small_sample_warning: bool,
    /// Per-observation fitted means, flat n x d.
    pub(crate) per_obs_mu: Vec<f64>,
    /// Per-observation fitted shapes, flat n x p_gamma.
    pub(crate) per_obs_gamma: Vec<f64>,
}

impl FitResult {
    #[inline]
    pub fn mu_row(&self, i: usize) -> &[f64] {
        let d = self.coefficients.d;
        &self.per_obs_mu[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn gamma_row(&self, i: usize) -> &[f64] {
        let p = self.coefficients.p_gamma();
        &self.per_obs_gamma[i * p..(i + 1) * p]
    }

    pub fn n_obs(&self) -> usize {
        let d = self.coefficients.d;
        self.per_obs_mu.len() / d
    }

    /// Materialize the per-observation ESAG parameters (mu_i, gamma_i).
    pub fn per_observation_params(&self) -> Result<Vec<EsagParams>> {
        (0..self.n_obs())
            .map(|i| EsagParams::new(self.mu_row(i).to_vec(), self.gamma_row(i).to_vec()))
            .collect()
    }
}

/// Fit from the moment-based starting point.
pub fn fit(data: &Dataset, spec: &NullSpec, cfg: &OptimizerConfig) -> Result<FitResult> {
    let init = init_coefficients(data, spec)?;
    fit_with_start(data, spec, &init, cfg)
}

/// Fit from an explicit starting point (frozen blocks are zeroed first).
pub fn fit_with_start(
    data: &Dataset,
    spec: &NullSpec,
    start: &RegressionCoefficients,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    let (d, q) = (data.dim(), data.n_covariates());
    start.validate()?;
    if start.d != d || start.q != q {
        return Err(EsagError::DimensionMismatch {
            what: "start coefficients",
            expected: d,
            got: start.d,
        });
    }
    let mut start = start.clone();
    spec.enforce(&mut start);
    let x0 = pack(&start, spec);

    let mut ws = LoglikWorkspace::new(d)?;
    let mut scratch = RegressionCoefficients::zeros(d, q)?;
    let objective = |x: &[f64]| {
        unpack_into(x, spec, &mut scratch);
        loglik_with(&scratch, data, &mut ws)
    };
    let outcome = maximize(objective, &x0, cfg);

    let mut coefficients = RegressionCoefficients::zeros(d, q)?;
    unpack_into(&outcome.x, spec, &mut coefficients);

    let n_free = spec.n_free(d, q)?;
    let n = data.n();
    let p = coefficients.p_gamma();
    let mut per_obs_mu = vec![0.0; n * d];
    let mut per_obs_gamma = vec![0.0; n * p];
    for i in 0..n {
        let x = data.covariate_row(i);
        coefficients.mu_at(x, &mut per_obs_mu[i * d..(i + 1) * d]);
        coefficients.gamma_at(x, &mut per_obs_gamma[i * p..(i + 1) * p]);
    }

    Ok(FitResult {
        coefficients,
        spec: spec.clone(),
        loglik: outcome.value,
        converged: outcome.converged,
        iterations: outcome.evals,
        n_free,
        small_sample_warning: n < n_free,
        per_obs_mu,
        per_obs_gamma,
    })
}

/// Fit a strictly nested (null, alternative) pair on the same data.
///
/// The alternative starts from the null optimum (a valid point of the
/// larger space), which guarantees the monotone-nesting property
/// alt.loglik >= null.loglik up to optimizer no-ops.
pub fn fit_nested_pair(
    data: &Dataset,
    null_spec: &NullSpec,
    alt_spec: &NullSpec,
    cfg: &OptimizerConfig,
) -> Result<(FitResult, FitResult)> {
    if !null_spec.is_strictly_nested_in(alt_spec, data.n_covariates()) {
        return Err(EsagError::NotNested);
    }
    let null = fit(data, null_spec, cfg)?;
    let alt = fit_with_start(data, alt_spec, &null.coefficients, cfg)?;
    Ok((null, alt))
}

/// Evaluate the fitted model at a raw covariate vector.
///
/// Returns the implied ESAG parameters and an extrapolation flag set
/// when any covariate lies outside its training range.
pub fn predict_params(
    coeffs: &RegressionCoefficients,
    x_raw: &[f64],
    scales: &[CovariateScale],
) -> Result<(EsagParams, bool)> {
    if x_raw.len() != coeffs.q || scales.len() != coeffs.q {
        return Err(EsagError::DimensionMismatch {
            what: "prediction covariates",
            expected: coeffs.q,
            got: x_raw.len(),
        });
    }
    let mut extrapolates = false;
    let x_std: Vec<f64> = x_raw
        .iter()
        .zip(scales)
        .map(|(&x, s)| {
            extrapolates |= s.extrapolates(x);
            s.apply(x)
        })
        .collect();
    let mut mu = vec![0.0; coeffs.d];
    let mut gamma = vec![0.0; coeffs.p_gamma()];
    coeffs.mu_at(&x_std, &mut mu);
    coeffs.gamma_at(&x_std, &mut gamma);
    Ok((EsagParams::new(mu, gamma)?, extrapolates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        let params = EsagParams::isotropic(vec![0.0, 0.0, 3.0]).unwrap();
        let ys = params.sample(n, &mut substream(seed, &[1]));
        let raw: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Dataset::standardizing(ys, raw, 1).unwrap()
    }

    #[test]
    fn standardize_basic() {
        let (std, scales) = standardize_covariates(&[0.0, 1.0, 2.0], 3, 1).unwrap();
        assert_eq!(std, vec![1.0, 1.5, 2.0]);
        assert_eq!(scales[0].min, 0.0);
        assert_eq!(scales[0].range, 2.0);
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let err = standardize_covariates(&[5.0, 5.0, 5.0], 3, 1).unwrap_err();
        assert_eq!(err, EsagError::ZeroRangeColumn(0));
    }

    #[test]
    fn standardize_endpoints_exact() {
        let raw = [3.0, -1.0, 7.0, 2.0];
        let (std, _) = standardize_covariates(&raw, 4, 1).unwrap();
        assert_eq!(std[1], 1.0); // min -> 1 exactly
        assert_eq!(std[2], 2.0); // max -> 2 exactly
    }

    #[test]
    fn loglik_additive_under_duplication() {
        let data = toy_dataset(20, 3);
        let mut coeffs = RegressionCoefficients::zeros(3, 1).unwrap();
        coeffs.alpha0 = vec![0.1, -0.4, 2.5];
        coeffs.a1 = vec![0.3, -0.1, 0.2];
        coeffs.beta0 = vec![0.2, -0.3];
        let single = loglik(&coeffs, &data).unwrap();

        // duplicate every observation
        let mut resp2 = Vec::new();
        let mut cov2 = Vec::new();
        for i in 0..data.n() {
            for _ in 0..2 {
                resp2.push(UnitVector::new(data.response(i).to_vec()).unwrap());
                cov2.extend_from_slice(data.covariate_row(i));
            }
        }
        let doubled = Dataset::new(resp2, cov2, 1, None).unwrap();
        let dd = loglik(&coeffs, &doubled).unwrap();
        assert!((dd - 2.0 * single).abs() < 1e-9, "{dd} vs {}", 2.0 * single);
    }

    #[test]
    fn loglik_reduces_to_isotropic_sum() {
        let data = toy_dataset(15, 4);
        let mut coeffs = RegressionCoefficients::zeros(3, 1).unwrap();
        coeffs.alpha0 = vec![0.5, 1.0, 2.0];
        let ll = loglik(&coeffs, &data).unwrap();
        let params = EsagParams::isotropic(coeffs.alpha0.clone()).unwrap();
        let direct: f64 = (0..data.n())
            .map(|i| params.log_density_raw(data.response(i)))
            .sum();
        assert!((ll - direct).abs() < 1e-12);
    }

    #[test]
    fn loglik_sentinel_on_tiny_mu() {
        let data = toy_dataset(10, 5);
        let mut coeffs = RegressionCoefficients::zeros(3, 1).unwrap();
        coeffs.alpha0 = vec![0.0, 0.0, 1e-9];
        assert_eq!(loglik(&coeffs, &data).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn init_respects_freezes_and_floor() {
        let data = toy_dataset(50, 6);
        let spec = NullSpec::isotropy().with_frozen_alpha_column(0);
        let init = init_coefficients(&data, &spec).unwrap();
        assert!(init.a1.iter().all(|&v| v == 0.0));
        assert!(init.beta0.iter().all(|&v| v == 0.0));
        assert!(linalg::norm(&init.alpha0) >= 0.1 - 1e-15);
    }

    #[test]
    fn pack_unpack_roundtrip_with_frozen_columns() {
        let d = 4;
        let q = 2;
        let p = gamma_dim(d).unwrap();
        let mut rng = substream(9, &[2]);
        let mut coeffs = RegressionCoefficients::zeros(d, q).unwrap();
        for v in coeffs
            .alpha0
            .iter_mut()
            .chain(coeffs.a1.iter_mut())
            .chain(coeffs.beta0.iter_mut())
            .chain(coeffs.b1.iter_mut())
        {
            *v = rng.sample(StandardNormal);
        }
        let spec = NullSpec::unrestricted().with_frozen_alpha_column(1).with_frozen_beta_column(0);
        let mut expected = coeffs.clone();
        spec.enforce(&mut expected);
        let x = pack(&expected, &spec);
        assert_eq!(x.len(), spec.n_free(d, q).unwrap());
        let mut back = RegressionCoefficients::zeros(d, q).unwrap();
        unpack_into(&x, &spec, &mut back);
        assert_eq!(back, expected);
        assert_eq!(back.p_gamma(), p);
    }

    #[test]
    fn nesting_relations() {
        let q = 1;
        assert!(NullSpec::isotropy().is_strictly_nested_in(&NullSpec::unrestricted(), q));
        assert!(NullSpec::mu_intercept_only().is_strictly_nested_in(&NullSpec::unrestricted(), q));
        assert!(NullSpec::gamma_intercept_only().is_strictly_nested_in(&NullSpec::unrestricted(), q));
        assert!(!NullSpec::unrestricted().is_strictly_nested_in(&NullSpec::isotropy(), q));
        // isotropy freezes beta0+B1; mu-intercept-only freezes A1: neither nests
        assert!(!NullSpec::isotropy().is_strictly_nested_in(&NullSpec::mu_intercept_only(), q));
        // a spec is not strictly nested in itself
        assert!(!NullSpec::isotropy().is_strictly_nested_in(&NullSpec::isotropy(), q));
    }

    #[test]
    fn predict_params_intercept_only_and_binary_covariate() {
        let mut coeffs = RegressionCoefficients::zeros(3, 0).unwrap();
        coeffs.alpha0 = vec![0.0, 0.0, 2.0];
        coeffs.beta0 = vec![0.3, 0.1];
        let (params, warn) = predict_params(&coeffs, &[], &[]).unwrap();
        assert_eq!(params.mu(), &[0.0, 0.0, 2.0]);
        assert_eq!(params.gamma(), &[0.3, 0.1]);
        assert!(!warn);

        // binary covariate 0/1 standardized to 1/2: mu difference is
        // exactly the A1 column
        let mut coeffs = RegressionCoefficients::zeros(3, 1).unwrap();
        coeffs.alpha0 = vec![1.0, 2.0, 3.0];
        coeffs.a1 = vec![0.5, -0.25, 1.5];
        let scales = [CovariateScale { min: 0.0, range: 1.0 }];
        let (p0, w0) = predict_params(&coeffs, &[0.0], &scales).unwrap();
        let (p1, w1) = predict_params(&coeffs, &[1.0], &scales).unwrap();
        assert!(!w0 && !w1);
        for j in 0..3 {
            assert_eq!(p1.mu()[j] - p0.mu()[j], coeffs.a1[j]);
        }
        // outside the training range flags extrapolation
        let (_, w2) = predict_params(&coeffs, &[1.5], &scales).unwrap();
        assert!(w2);
    }
}

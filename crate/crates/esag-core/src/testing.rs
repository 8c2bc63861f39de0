//! Test statistics and the parametric-bootstrap engine.
//!
//! Four statistics compare a restricted (null) fit against an
//! unrestricted (alternative) fit of the same data:
//!
//! - RoC, the ratio of concentrations (1/n) sum |mu_a,i| / |mu_0,i| —
//!   near 1 under a true null, inflated when the null attenuates the
//!   fitted concentration;
//! - D = (1/n) sum (2 - cos_i) |mu_a,i|/|mu_0,i| with cos_i the cosine
//!   similarity of the two fitted means, which also picks up
//!   orientation discrepancies;
//! - M, the norm of the mean elementwise gap between observed squared
//!   responses and their null-model expectation estimated by Monte
//!   Carlo (only the null fit is needed);
//! - LR = 2 (loglik_alt - loglik_null) as a benchmark.
//!
//! One bootstrap engine serves all of them: simulate responses from the
//! per-observation null fit holding covariates fixed, refit both
//! models, recompute the statistic, and report p = #{stat_b > stat}/B.
//! Replicate b draws from a substream derived from (seed, b), so
//! reports are identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::EsagParams;
use crate::error::{EsagError, Result};
use crate::linalg;
use crate::optim::OptimizerConfig;
use crate::regress::{fit, fit_with_start, Dataset, FitResult, NullSpec, MU_NORM_FLOOR};
use crate::special::chi2_cdf;
use crate::stream::substream;

/// Statistic selector for the bootstrap engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    Roc,
    D,
    M,
    Lr,
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::Roc => "RoC",
            Statistic::D => "D",
            Statistic::M => "M",
            Statistic::Lr => "LR",
        }
    }

    fn needs_alt_fit(&self) -> bool {
        !matches!(self, Statistic::M)
    }
}

/// Compact fit description carried inside a [`TestReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub loglik: f64,
    pub converged: bool,
    pub n_free: usize,
    pub iterations: usize,
}

impl From<&FitResult> for FitSummary {
    fn from(f: &FitResult) -> Self {
        FitSummary {
            loglik: f.loglik,
            converged: f.converged,
            n_free: f.n_free,
            iterations: f.iterations,
        }
    }
}

/// Outcome of one bootstrap test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: Statistic,
    pub observed: f64,
    /// Statistic values from the included replicates, in replicate order.
    pub bootstrap_values: Vec<f64>,
    /// #{b : bootstrap_values[b] > observed} / b_used, or the
    /// (s+1)/(B+1) variant when the correction flag is set.
    pub p_value: f64,
    pub b_requested: usize,
    pub b_used: usize,
    pub excluded: usize,
    /// Set when more than 10% of replicates were excluded.
    pub reliability_warning: bool,
    pub seed: u64,
    pub mc_size: usize,
    pub null_fit: FitSummary,
    pub alt_fit: Option<FitSummary>,
}

/// Engine configuration.
#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    /// Number of bootstrap replicates (the paper's protocol uses 300).
    pub b: usize,
    /// Monte Carlo draws per observation inside the M statistic.
    pub mc_size: usize,
    pub seed: u64,
    /// Use (s+1)/(B+1) instead of s/B.
    pub finite_sample_correction: bool,
    /// Optimizer settings for the observed-data fits.
    pub observed_cfg: OptimizerConfig,
    /// Optimizer settings for the warm-started replicate refits.
    pub replicate_cfg: OptimizerConfig,
}

impl BootstrapConfig {
    pub fn new(b: usize, seed: u64) -> Self {
        BootstrapConfig {
            b,
            mc_size: 10_000,
            seed,
            finite_sample_correction: false,
            observed_cfg: OptimizerConfig::default(),
            replicate_cfg: OptimizerConfig::light(seed),
        }
    }
}

const TAG_OBSERVED: u64 = 0x2001;
const TAG_REPLICATE: u64 = 0x2002;
const TAG_M_DRAWS: u64 = 0x2003;
const TAG_GOF: u64 = 0x2004;

/// Ratio of concentrations between an alternative and a null fit.
pub fn roc_statistic(fit0: &FitResult, fit_a: &FitResult) -> Result<f64> {
    per_obs_mean(fit0, fit_a, |n0, na, _cos| na / n0)
}

/// Direction-and-concentration discrepancy statistic.
pub fn d_statistic(fit0: &FitResult, fit_a: &FitResult) -> Result<f64> {
    per_obs_mean(fit0, fit_a, |n0, na, cos| (2.0 - cos) * na / n0)
}

fn per_obs_mean(
    fit0: &FitResult,
    fit_a: &FitResult,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<f64> {
    let n = fit0.n_obs();
    if n != fit_a.n_obs() {
        return Err(EsagError::InvalidArgument(
            "fits computed on different numbers of observations".into(),
        ));
    }
    let mut acc = 0.0;
    for i in 0..n {
        let m0 = fit0.mu_row(i);
        let ma = fit_a.mu_row(i);
        let n0 = linalg::norm(m0);
        let na = linalg::norm(ma);
        if n0 < MU_NORM_FLOOR || na < MU_NORM_FLOOR {
            return Err(EsagError::DegenerateFit(i));
        }
        let cos = linalg::dot(m0, ma) / (n0 * na);
        acc += f(n0, na, cos);
    }
    Ok(acc / n as f64)
}

/// Likelihood-ratio statistic 2 (loglik_alt - loglik_null), floored at 0.
pub fn lr_statistic(fit0: &FitResult, fit_a: &FitResult) -> Result<f64> {
    if !fit0
        .spec
        .is_strictly_nested_in(&fit_a.spec, fit0.coefficients.q)
    {
        return Err(EsagError::NotNested);
    }
    Ok(lr_raw(fit0, fit_a).max(0.0))
}

#[inline]
fn lr_raw(fit0: &FitResult, fit_a: &FitResult) -> f64 {
    2.0 * (fit_a.loglik - fit0.loglik)
}

/// Second-moment statistic: || (1/n) sum_i (Y_i^2 - E0[Y_i^2]) || with
/// the null expectation estimated from `mc_size` draws per observation.
pub fn m_statistic<R: rand::Rng + ?Sized>(
    fit0: &FitResult,
    data: &Dataset,
    mc_size: usize,
    rng: &mut R,
) -> Result<f64> {
    if mc_size == 0 {
        return Err(EsagError::InvalidArgument("mc_size must be >= 1".into()));
    }
    let params = fit0.per_observation_params()?;
    m_statistic_with_params(&params, data, mc_size, rng)
}

fn m_statistic_with_params<R: rand::Rng + ?Sized>(
    params: &[EsagParams],
    data: &Dataset,
    mc_size: usize,
    rng: &mut R,
) -> Result<f64> {
    let (n, d) = (data.n(), data.dim());
    if params.len() != n {
        return Err(EsagError::InvalidArgument(
            "per-observation parameters do not match the dataset".into(),
        ));
    }
    let mut diff = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut expected = vec![0.0; d];
    for i in 0..n {
        expected.fill(0.0);
        for _ in 0..mc_size {
            params[i].sample_into(rng, &mut buf);
            for (e, &y) in expected.iter_mut().zip(buf.iter()) {
                *e += y * y;
            }
        }
        let y = data.response(i);
        for j in 0..d {
            diff[j] += y[j] * y[j] - expected[j] / mc_size as f64;
        }
    }
    diff.iter_mut().for_each(|x| *x /= n as f64);
    Ok(linalg::norm(&diff))
}

/// Run one bootstrap test.
pub fn bootstrap_test(
    data: &Dataset,
    null_spec: &NullSpec,
    alt_spec: &NullSpec,
    statistic: Statistic,
    cfg: &BootstrapConfig,
) -> Result<TestReport> {
    let mut reports = bootstrap_test_multi(data, null_spec, alt_spec, &[statistic], cfg)?;
    Ok(reports.pop().expect("one statistic requested"))
}

/// Run several statistics through one bootstrap pass, sharing the fits.
///
/// Substreams are tagged per purpose, so each statistic's report is
/// identical to what [`bootstrap_test`] would produce on its own.
pub fn bootstrap_test_multi(
    data: &Dataset,
    null_spec: &NullSpec,
    alt_spec: &NullSpec,
    statistics: &[Statistic],
    cfg: &BootstrapConfig,
) -> Result<Vec<TestReport>> {
    if statistics.is_empty() {
        return Err(EsagError::InvalidArgument("no statistics requested".into()));
    }
    if cfg.b == 0 {
        return Err(EsagError::InvalidArgument("B must be >= 1".into()));
    }
    if !null_spec.is_strictly_nested_in(alt_spec, data.n_covariates()) {
        return Err(EsagError::NotNested);
    }
    let needs_alt = statistics.iter().any(Statistic::needs_alt_fit);
    let needs_m = statistics.contains(&Statistic::M);

    let mut observed_cfg = cfg.observed_cfg.clone();
    observed_cfg.seed = stream_seed(cfg.seed, TAG_OBSERVED);
    let null_fit = fit(data, null_spec, &observed_cfg)?;
    let alt_fit = if needs_alt {
        Some(fit_with_start(data, alt_spec, &null_fit.coefficients, &observed_cfg)?)
    } else {
        None
    };

    let null_params = null_fit.per_observation_params()?;
    let observed: Vec<f64> = statistics
        .iter()
        .map(|&s| {
            observed_statistic(
                s,
                &null_fit,
                alt_fit.as_ref(),
                data,
                &null_params,
                cfg.mc_size,
                cfg.seed,
                0,
            )
        })
        .collect::<Result<_>>()?;

    // Replicates: simulate from the null fit, refit, recompute.
    let replicate_values: Vec<Option<Vec<f64>>> = (1..=cfg.b)
        .into_par_iter()
        .map(|b| {
            replicate_pass(
                b as u64,
                data,
                null_spec,
                alt_spec,
                &null_fit,
                statistics,
                needs_alt,
                needs_m,
                cfg,
                &null_params,
            )
        })
        .collect();

    let mut reports = Vec::with_capacity(statistics.len());
    for (k, &stat) in statistics.iter().enumerate() {
        let mut values = Vec::with_capacity(cfg.b);
        let mut excluded = 0usize;
        for rep in &replicate_values {
            match rep {
                Some(v) => values.push(v[k]),
                None => excluded += 1,
            }
        }
        let b_used = values.len();
        if b_used == 0 {
            return Err(EsagError::DegenerateData(
                "every bootstrap replicate failed to converge".into(),
            ));
        }
        let s = values.iter().filter(|&&v| v > observed[k]).count();
        let p_value = if cfg.finite_sample_correction {
            (s + 1) as f64 / (b_used + 1) as f64
        } else {
            s as f64 / b_used as f64
        };
        reports.push(TestReport {
            statistic: stat,
            observed: observed[k],
            bootstrap_values: values,
            p_value,
            b_requested: cfg.b,
            b_used,
            excluded,
            reliability_warning: excluded * 10 > cfg.b,
            seed: cfg.seed,
            mc_size: if stat == Statistic::M { cfg.mc_size } else { 0 },
            null_fit: FitSummary::from(&null_fit),
            alt_fit: alt_fit.as_ref().map(FitSummary::from),
        });
    }
    Ok(reports)
}

fn stream_seed(seed: u64, tag: u64) -> u64 {
    use rand::Rng;
    substream(seed, &[tag]).random()
}

#[allow(clippy::too_many_arguments)]
fn observed_statistic(
    stat: Statistic,
    null_fit: &FitResult,
    alt_fit: Option<&FitResult>,
    data: &Dataset,
    null_params: &[EsagParams],
    mc_size: usize,
    seed: u64,
    replicate: u64,
) -> Result<f64> {
    match stat {
        Statistic::Roc => roc_statistic(null_fit, alt_fit.expect("alt fit present")),
        Statistic::D => d_statistic(null_fit, alt_fit.expect("alt fit present")),
        Statistic::Lr => lr_statistic(null_fit, alt_fit.expect("alt fit present")),
        Statistic::M => {
            let mut rng = substream(seed, &[TAG_M_DRAWS, replicate]);
            m_statistic_with_params(null_params, data, mc_size, &mut rng)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn replicate_pass(
    b: u64,
    data: &Dataset,
    null_spec: &NullSpec,
    alt_spec: &NullSpec,
    observed_null: &FitResult,
    statistics: &[Statistic],
    needs_alt: bool,
    needs_m: bool,
    cfg: &BootstrapConfig,
    null_params: &[EsagParams],
) -> Option<Vec<f64>> {
    let (n, d) = (data.n(), data.dim());
    let mut rng = substream(cfg.seed, &[TAG_REPLICATE, b]);
    let mut responses = vec![0.0; n * d];
    for i in 0..n {
        null_params[i].sample_into(&mut rng, &mut responses[i * d..(i + 1) * d]);
    }
    let data_b = data.with_responses(&responses).ok()?;

    let mut rep_cfg = cfg.replicate_cfg.clone();
    rep_cfg.seed = stream_seed(cfg.seed, TAG_REPLICATE ^ b.rotate_left(17));
    let null_b = fit_with_start(&data_b, null_spec, &observed_null.coefficients, &rep_cfg).ok()?;
    if !null_b.converged {
        return None;
    }
    let alt_b = if needs_alt {
        let f = fit_with_start(&data_b, alt_spec, &null_b.coefficients, &rep_cfg).ok()?;
        if !f.converged {
            return None;
        }
        Some(f)
    } else {
        None
    };
    if let Some(a) = &alt_b {
        // a clearly negative LR means the replicate refit failed
        if lr_raw(&null_b, a) < -1e-6 {
            return None;
        }
    }
    let null_b_params = if needs_m {
        match null_b.per_observation_params() {
            Ok(p) => p,
            Err(_) => return None,
        }
    } else {
        Vec::new()
    };

    let mut out = Vec::with_capacity(statistics.len());
    for &stat in statistics {
        let value = match stat {
            Statistic::Roc => roc_statistic(&null_b, alt_b.as_ref().unwrap()).ok()?,
            Statistic::D => d_statistic(&null_b, alt_b.as_ref().unwrap()).ok()?,
            Statistic::Lr => lr_statistic(&null_b, alt_b.as_ref().unwrap()).ok()?,
            Statistic::M => {
                let mut mrng = substream(cfg.seed, &[TAG_M_DRAWS, b]);
                m_statistic_with_params(&null_b_params, &data_b, cfg.mc_size, &mut mrng).ok()?
            }
        };
        out.push(value);
    }
    Some(out)
}

/// Residual-based goodness-of-fit quantities.
///
/// T_i = (|mu_i|^2 + sum_j lambda_{i,j}) r_i^T Vinv_i r_i with
/// r_i = (I - Yhat_i Yhat_i^T) Y_i the directional residual of the
/// prediction Yhat_i = mu_i/|mu_i|; approximately chi-square with d-1
/// degrees of freedom under a correct model.
pub fn gof_t_values(fit: &FitResult, data: &Dataset) -> Result<Vec<f64>> {
    let params = fit.per_observation_params()?;
    gof_t_with_params(&params, data)
}

fn gof_t_with_params(params: &[EsagParams], data: &Dataset) -> Result<Vec<f64>> {
    let (n, d) = (data.n(), data.dim());
    let mut out = Vec::with_capacity(n);
    let mut resid = vec![0.0; d];
    for i in 0..n {
        let p = &params[i];
        let y = data.response(i);
        let yhat = p.mean_direction();
        let proj = linalg::dot(yhat, y);
        for j in 0..d {
            resid[j] = y[j] - proj * yhat[j];
        }
        let lambda_sum: f64 = p.cov().eigenvalues.iter().sum();
        let scale = p.mu_norm() * p.mu_norm() + lambda_sum;
        out.push(scale * linalg::quadform(&p.cov().vinv, d, &resid));
    }
    Ok(out)
}

/// Kolmogorov–Smirnov distance of a sample to the chi-square(dof) cdf.
pub fn ks_distance_chi2(values: &[f64], dof: usize) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut worst = 0.0f64;
    for (i, &t) in sorted.iter().enumerate() {
        let f = chi2_cdf(dof, t);
        let hi = (i + 1) as f64 / n - f;
        let lo = f - i as f64 / n;
        worst = worst.max(hi).max(lo);
    }
    worst
}

/// Goodness-of-fit report for a fitted regression.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GofReport {
    pub t_values: Vec<f64>,
    pub dof: usize,
    /// KS distance of the observed T sample to chi-square(dof).
    pub ks_observed: f64,
    pub bootstrap_ks: Vec<f64>,
    pub p_value: f64,
    pub b_requested: usize,
    pub b_used: usize,
    pub excluded: usize,
    pub seed: u64,
}

/// Parametric-bootstrap goodness-of-fit test.
///
/// The observed model is refit on samples drawn from itself; the KS
/// distance of the T values to chi-square(d-1) is the summary statistic
/// whose null distribution the bootstrap approximates.
pub fn gof_test(
    data: &Dataset,
    fit_result: &FitResult,
    b: usize,
    seed: u64,
    replicate_cfg: &OptimizerConfig,
) -> Result<GofReport> {
    if b == 0 {
        return Err(EsagError::InvalidArgument("B must be >= 1".into()));
    }
    let d = data.dim();
    let params = fit_result.per_observation_params()?;
    let t_values = gof_t_with_params(&params, data)?;
    let ks_observed = ks_distance_chi2(&t_values, d - 1);

    let spec = fit_result.spec.clone();
    let results: Vec<Option<f64>> = (1..=b as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(seed, &[TAG_GOF, rep]);
            let (n, d) = (data.n(), data.dim());
            let mut responses = vec![0.0; n * d];
            for i in 0..n {
                params[i].sample_into(&mut rng, &mut responses[i * d..(i + 1) * d]);
            }
            let data_b = data.with_responses(&responses).ok()?;
            let mut cfg = replicate_cfg.clone();
            cfg.seed = stream_seed(seed, TAG_GOF ^ rep.rotate_left(11));
            let refit = fit_with_start(&data_b, &spec, &fit_result.coefficients, &cfg).ok()?;
            if !refit.converged {
                return None;
            }
            let t_b = gof_t_values(&refit, &data_b).ok()?;
            Some(ks_distance_chi2(&t_b, d - 1))
        })
        .collect();

    let bootstrap_ks: Vec<f64> = results.iter().filter_map(|r| *r).collect();
    let excluded = b - bootstrap_ks.len();
    if bootstrap_ks.is_empty() {
        return Err(EsagError::DegenerateData(
            "every goodness-of-fit replicate failed to converge".into(),
        ));
    }
    let s = bootstrap_ks.iter().filter(|&&v| v > ks_observed).count();
    Ok(GofReport {
        t_values,
        dof: d - 1,
        ks_observed,
        p_value: s as f64 / bootstrap_ks.len() as f64,
        b_used: bootstrap_ks.len(),
        bootstrap_ks,
        b_requested: b,
        excluded,
        seed,
    })
}

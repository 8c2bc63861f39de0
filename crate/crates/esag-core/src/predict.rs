//! Ellipsoidal prediction regions on the sphere.
//!
//! A region is {y : (y - c)^T Vinv (y - c) <= q} with c the fitted mean
//! direction and Vinv the fitted inverse covariance; among all
//! ellipsoidal regions of this shape class with the same coverage, the
//! one built from the true V has the smallest volume (the quadratic
//! form's variance 2 sum D_j^2 is minimized at 2d when every
//! eigenvalue D_j of the mismatch matrix is 1 — see
//! [`quadform_variance`], which exists as the oracle for that
//! property).
//!
//! The threshold is estimated by pooling quadratic forms of parametric
//! draws: m from the fitted model, plus m per nonparametric resample
//! refit when B > 0 (each replicate draws against its own fitted center
//! and inverse covariance, which propagates MLE uncertainty into the
//! pool). The (1-a) pooled quantile is the k-th order statistic with
//! k = ceil((1-a) N).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{EsagParams, UnitVector};
use crate::error::{EsagError, Result};
use crate::linalg;
use crate::optim::OptimizerConfig;
use crate::regress::{fit, fit_with_start, predict_params, Dataset, FitResult, NullSpec};
use crate::stream::substream;

const TAG_PARAM_DRAWS: u64 = 0x3001;
const TAG_RESAMPLE: u64 = 0x3002;

/// One prediction region at a fixed level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRegion {
    /// Center mu_hat/|mu_hat| on the sphere.
    pub center: Vec<f64>,
    /// Inverse covariance of the fitted ESAG, row-major d x d.
    pub vinv: Vec<f64>,
    /// Pooled-quantile threshold q_hat.
    pub threshold: f64,
    /// Nominal coverage 1 - a.
    pub level: f64,
    pub provenance: RegionProvenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionProvenance {
    pub m: usize,
    pub b_requested: usize,
    pub b_used: usize,
    pub seed: u64,
}

impl PredictionRegion {
    /// Quadratic form (y - c)^T Vinv (y - c).
    pub fn quadratic_form(&self, y: &[f64]) -> f64 {
        let d = self.center.len();
        debug_assert_eq!(y.len(), d);
        let mut diff = [0.0f64; crate::dist::MAX_DIM];
        for i in 0..d {
            diff[i] = y[i] - self.center[i];
        }
        linalg::quadform(&self.vinv, d, &diff[..d])
    }

    /// Membership test (closed region: boundary points are inside).
    pub fn contains(&self, y: &[f64]) -> bool {
        self.quadratic_form(y) <= self.threshold
    }

    /// Fraction of sample points inside the region.
    pub fn coverage(&self, sample: &[UnitVector]) -> f64 {
        assert!(!sample.is_empty(), "coverage of an empty sample");
        let hits = sample.iter().filter(|y| self.contains(y.coords())).count();
        hits as f64 / sample.len() as f64
    }

    /// Coverage over a flat n x d point buffer.
    pub fn coverage_flat(&self, flat: &[f64]) -> f64 {
        let d = self.center.len();
        assert!(!flat.is_empty() && flat.len() % d == 0);
        let n = flat.len() / d;
        let hits = (0..n)
            .filter(|&i| self.contains(&flat[i * d..(i + 1) * d]))
            .count();
        hits as f64 / n as f64
    }
}

/// Region construction settings.
#[derive(Debug, Clone)]
pub struct RegionConfig {
    /// Parametric draws per fit (Step 3 of the bootstrap path).
    pub m: usize,
    /// Nonparametric resample refits; 0 skips that stage.
    pub b: usize,
    pub seed: u64,
    pub observed_cfg: OptimizerConfig,
    pub replicate_cfg: OptimizerConfig,
}

impl RegionConfig {
    pub fn new(seed: u64) -> Self {
        RegionConfig {
            m: 2000,
            b: 0,
            seed,
            observed_cfg: OptimizerConfig::default(),
            replicate_cfg: OptimizerConfig::light(seed),
        }
    }
}

/// Regions plus the fit they came from.
#[derive(Debug, Clone)]
pub struct RegionSet {
    pub regions: Vec<PredictionRegion>,
    pub fit: FitResult,
    /// Replicates dropped for non-convergence (pool shrank).
    pub dropped_replicates: usize,
    pub pool_size: usize,
}

fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(EsagError::InvalidArgument("no levels requested".into()));
    }
    for &l in levels {
        if !(l > 0.0 && l < 1.0) {
            return Err(EsagError::InvalidArgument(format!(
                "level {l} outside (0, 1)"
            )));
        }
    }
    Ok(())
}

/// Draw m quadratic forms of parametric samples against the parameter
/// point's own center and inverse covariance.
fn quadform_draws<R: Rng + ?Sized>(params: &EsagParams, m: usize, rng: &mut R, out: &mut Vec<f64>) {
    let d = params.dim();
    let center = params.mean_direction();
    let vinv = &params.cov().vinv;
    let mut y = [0.0f64; crate::dist::MAX_DIM];
    let mut diff = [0.0f64; crate::dist::MAX_DIM];
    for _ in 0..m {
        params.sample_into(rng, &mut y[..d]);
        for i in 0..d {
            diff[i] = y[i] - center[i];
        }
        out.push(linalg::quadform(vinv, d, &diff[..d]));
    }
}

/// Thresholds for each level from one pooled sample: the k-th order
/// statistic with k = ceil((1-a) N).
fn pooled_thresholds(pool: &mut [f64], levels: &[f64]) -> Vec<f64> {
    pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = pool.len();
    levels
        .iter()
        .map(|&level| {
            let k = (level * n as f64).ceil() as usize;
            pool[k.clamp(1, n) - 1]
        })
        .collect()
}

/// Prediction regions from known parameters (no fitting stage).
///
/// This is the plain definition of the threshold: the (1-a) quantile of
/// the quadratic form under the model itself, estimated from m draws.
/// It exists so the coverage contract can be tested against the
/// distribution directly.
pub fn regions_from_params(
    params: &EsagParams,
    levels: &[f64],
    m: usize,
    seed: u64,
) -> Result<Vec<PredictionRegion>> {
    validate_levels(levels)?;
    if m == 0 {
        return Err(EsagError::InvalidArgument("m must be >= 1".into()));
    }
    let mut pool = Vec::with_capacity(m);
    let mut rng = substream(seed, &[TAG_PARAM_DRAWS, 0]);
    quadform_draws(params, m, &mut rng, &mut pool);
    let thresholds = pooled_thresholds(&mut pool, levels);
    Ok(levels
        .iter()
        .zip(thresholds)
        .map(|(&level, threshold)| PredictionRegion {
            center: params.mean_direction().to_vec(),
            vinv: params.cov().vinv.clone(),
            threshold,
            level,
            provenance: RegionProvenance {
                m,
                b_requested: 0,
                b_used: 0,
                seed,
            },
        })
        .collect())
}

/// Full region construction: fit the saturated regression, draw m
/// parametric quadratic forms, add m per nonparametric resample refit,
/// and cut the pooled (1-a) quantiles.
pub fn prediction_regions(
    data: &Dataset,
    x0_raw: &[f64],
    levels: &[f64],
    cfg: &RegionConfig,
) -> Result<RegionSet> {
    validate_levels(levels)?;
    if cfg.m == 0 {
        return Err(EsagError::InvalidArgument("m must be >= 1".into()));
    }
    let spec = NullSpec::unrestricted();
    let mut observed_cfg = cfg.observed_cfg.clone();
    observed_cfg.seed = derived_u64(cfg.seed, 0x51);
    let fit_result = fit(data, &spec, &observed_cfg)?;
    let scales = data.scales().unwrap_or(&[]);
    let (params, _extrapolates) = predict_params(&fit_result.coefficients, x0_raw, scales)?;

    let mut pool = Vec::with_capacity(cfg.m * (cfg.b + 1));
    let mut rng = substream(cfg.seed, &[TAG_PARAM_DRAWS, 0]);
    quadform_draws(&params, cfg.m, &mut rng, &mut pool);

    let mut dropped = 0usize;
    if cfg.b > 0 {
        let replicate_pools: Vec<Option<Vec<f64>>> = (1..=cfg.b as u64)
            .into_par_iter()
            .map(|rep| {
                let n = data.n();
                let mut rng = substream(cfg.seed, &[TAG_RESAMPLE, rep]);
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let data_b = data.resample_rows(&rows);
                let mut rep_cfg = cfg.replicate_cfg.clone();
                rep_cfg.seed = derived_u64(cfg.seed, 0x5200 + rep);
                let refit =
                    fit_with_start(&data_b, &spec, &fit_result.coefficients, &rep_cfg).ok()?;
                if !refit.converged {
                    return None;
                }
                let (params_b, _) =
                    predict_params(&refit.coefficients, x0_raw, data_b.scales().unwrap_or(&[]))
                        .ok()?;
                let mut draws = Vec::with_capacity(cfg.m);
                let mut draw_rng = substream(cfg.seed, &[TAG_PARAM_DRAWS, rep]);
                quadform_draws(&params_b, cfg.m, &mut draw_rng, &mut draws);
                Some(draws)
            })
            .collect();
        for rep in replicate_pools {
            match rep {
                Some(draws) => pool.extend(draws),
                None => dropped += 1,
            }
        }
    }

    let pool_size = pool.len();
    let thresholds = pooled_thresholds(&mut pool, levels);
    let regions = levels
        .iter()
        .zip(thresholds)
        .map(|(&level, threshold)| PredictionRegion {
            center: params.mean_direction().to_vec(),
            vinv: params.cov().vinv.clone(),
            threshold,
            level,
            provenance: RegionProvenance {
                m: cfg.m,
                b_requested: cfg.b,
                b_used: cfg.b - dropped,
                seed: cfg.seed,
            },
        })
        .collect();
    Ok(RegionSet {
        regions,
        fit: fit_result,
        dropped_replicates: dropped,
        pool_size,
    })
}

fn derived_u64(seed: u64, tag: u64) -> u64 {
    substream(seed, &[tag]).random()
}

/// Variance of Z^T G Z for Z standard normal and G symmetric positive
/// definite with det(G) = 1: equals 2 sum_j D_j^2 >= 2d with equality
/// only at G = I (arithmetic-geometric mean inequality on the
/// eigenvalues D_j).
pub fn quadform_variance(g: &[f64], d: usize) -> Result<f64> {
    if g.len() != d * d {
        return Err(EsagError::DimensionMismatch {
            what: "G",
            expected: d * d,
            got: g.len(),
        });
    }
    let mut scale = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            scale = scale.max(g[i * d + j].abs());
            if (g[i * d + j] - g[j * d + i]).abs() > 1e-10 * scale.max(1.0) {
                return Err(EsagError::InvalidArgument("G is not symmetric".into()));
            }
        }
    }
    let (eigvals, _) = linalg::sym_eigen(g, d);
    if eigvals.iter().any(|&l| l <= 0.0) {
        return Err(EsagError::InvalidArgument(
            "G is not positive definite".into(),
        ));
    }
    let det: f64 = eigvals.iter().product();
    if (det - 1.0).abs() > 1e-8 {
        return Err(EsagError::DeterminantViolation(det));
    }
    Ok(2.0 * eigvals.iter().map(|&l| l * l).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadform_variance_identity_and_diag() {
        let id3 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!((quadform_variance(&id3, 3).unwrap() - 6.0).abs() < 1e-12);
        // d=2, eigenvalues (2, 1/2): 2*(4 + 1/4) = 8.5
        let g = [2.0, 0.0, 0.0, 0.5];
        assert!((quadform_variance(&g, 2).unwrap() - 8.5).abs() < 1e-12);
        assert!(8.5 >= 4.0);
    }

    #[test]
    fn quadform_variance_det_contract() {
        let g = [2.0, 0.0, 0.0, 2.0];
        assert!(matches!(
            quadform_variance(&g, 2),
            Err(EsagError::DeterminantViolation(_))
        ));
    }

    #[test]
    fn region_membership_basics() {
        let id = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let region = PredictionRegion {
            center: vec![0.0, 0.0, 1.0],
            vinv: id,
            threshold: 0.5,
            level: 0.9,
            provenance: RegionProvenance {
                m: 0,
                b_requested: 0,
                b_used: 0,
                seed: 0,
            },
        };
        // center is inside
        assert!(region.contains(&[0.0, 0.0, 1.0]));
        // antipode has quadratic form 4
        assert!((region.quadratic_form(&[0.0, 0.0, -1.0]) - 4.0).abs() < 1e-15);
        assert!(!region.contains(&[0.0, 0.0, -1.0]));
        // boundary point: quadratic form exactly at the threshold
        let y = [0.5f64.sqrt(), 0.0, 0.5f64.sqrt()];
        let mut boundary = region.clone();
        boundary.threshold = boundary.quadratic_form(&y);
        assert!(boundary.contains(&y));
        // zero threshold admits only the zero-form point
        let mut empty = region.clone();
        empty.threshold = 0.0;
        assert!(empty.contains(&[0.0, 0.0, 1.0]));
        assert!(!empty.contains(&y));
    }

    #[test]
    fn coverage_hand_count() {
        let id = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let region = PredictionRegion {
            center: vec![0.0, 0.0, 1.0],
            vinv: id,
            threshold: 1.0,
            level: 0.9,
            provenance: RegionProvenance {
                m: 0,
                b_requested: 0,
                b_used: 0,
                seed: 0,
            },
        };
        // quadratic form of (sin t, 0, cos t) is 2(1 - cos t); inside iff cos t >= 1/2
        let inside = |t: f64| UnitVector::new(vec![t.sin(), 0.0, t.cos()]).unwrap();
        let sample = vec![
            inside(0.0),   // qf 0
            inside(1.0),   // cos 0.54 -> in
            inside(1.1),   // cos 0.45 -> out
            inside(2.0),   // out
            inside(-0.5),  // in
        ];
        assert!((region.coverage(&sample) - 3.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn thresholds_monotone_in_level() {
        let params = EsagParams::new(
            vec![1.0, -2.0, 2.0, 0.5],
            vec![0.5, -0.3, 0.2, 0.4, -0.1],
        )
        .unwrap();
        let regions = regions_from_params(&params, &[0.7, 0.8, 0.9], 4000, 11).unwrap();
        assert!(regions[0].threshold <= regions[1].threshold);
        assert!(regions[1].threshold <= regions[2].threshold);
    }
}

//! Derivative-free maximization by the Nelder–Mead simplex with random
//! restarts.
//!
//! The likelihood surfaces this crate optimizes are smooth but can be
//! irregular near frozen-parameter boundaries, so the driver runs the
//! simplex to convergence, refreshes it around the incumbent with a
//! smaller step, and optionally restarts from randomly perturbed points,
//! keeping the best outcome. Expansion/contraction coefficients follow
//! the dimension-adaptive variant of Gao and Han.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::stream::substream;

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    /// Number of random restarts after the initial run.
    pub restarts: usize,
    /// Scale of the Gaussian perturbation applied to the incumbent when
    /// restarting (relative to |x_i| + 1).
    pub restart_scale: f64,
    /// Initial simplex step (relative to |x_i| + 1).
    pub init_step: f64,
    /// Converged when a simplex refresh improves the objective by less
    /// than this relative amount.
    pub rel_tol: f64,
    /// Total function-evaluation budget is this many per free parameter.
    pub max_evals_per_param: usize,
    /// Stream for restart perturbations.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            restarts: 5,
            restart_scale: 0.25,
            init_step: 0.25,
            rel_tol: 1e-8,
            max_evals_per_param: 5000,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    /// A lighter configuration for warm-started refits (bootstrap
    /// replicates): no restarts, smaller initial simplex, smaller
    /// evaluation budget.
    pub fn light(seed: u64) -> Self {
        OptimizerConfig {
            restarts: 0,
            restart_scale: 0.25,
            init_step: 0.05,
            rel_tol: 1e-7,
            max_evals_per_param: 600,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Maximize `f` starting from `x0`.
pub fn maximize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], cfg: &OptimizerConfig) -> OptimOutcome {
    let n = x0.len();
    if n == 0 {
        let value = f(x0);
        return OptimOutcome {
            x: vec![],
            value,
            evals: 1,
            converged: true,
        };
    }
    let budget = cfg.max_evals_per_param.saturating_mul(n).max(n + 2);
    let mut evals = 0usize;
    // minimize g = -f, mapping NaN to +inf so broken points sort last
    let mut g = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };

    let mut best_x = x0.to_vec();
    let mut best_g = g(&best_x, &mut evals);
    let mut converged = false;

    let mut rng = substream(cfg.seed, &[0x4f50_5449_4d00, 0]);
    for restart in 0..=cfg.restarts {
        let start: Vec<f64> = if restart == 0 {
            best_x.clone()
        } else {
            best_x
                .iter()
                .map(|&x| x + cfg.restart_scale * (x.abs() + 1.0) * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let mut step = cfg.init_step;
        let mut run_x = start;
        let mut run_g = f64::INFINITY;
        // refresh loop: rerun with a shrinking simplex around the
        // incumbent until the improvement stalls
        for refresh in 0..12 {
            if evals >= budget {
                break;
            }
            let (x1, g1) = simplex_min(&mut g, &mut evals, budget, &run_x, step, cfg.rel_tol);
            let improved = run_g - g1;
            run_x = x1;
            run_g = g1;
            step *= 0.2;
            if refresh > 0 && improved <= cfg.rel_tol * (run_g.abs() + 1e-12) {
                if run_g < best_g {
                    best_g = run_g;
                    best_x = run_x.clone();
                }
                converged = true;
                break;
            }
        }
        if run_g < best_g {
            best_g = run_g;
            best_x = run_x;
        }
        if evals >= budget {
            break;
        }
    }

    OptimOutcome {
        x: best_x,
        value: -best_g,
        evals,
        converged,
    }
}

/// One Nelder–Mead descent; returns the best vertex found.
fn simplex_min<G: FnMut(&[f64], &mut usize) -> f64>(
    g: &mut G,
    evals: &mut usize,
    budget: usize,
    x0: &[f64],
    step: f64,
    rel_tol: f64,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / n as f64;
    let gamma = 0.75 - 1.0 / (2.0 * n as f64);
    let delta = 1.0 - 1.0 / n as f64;

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step * (p[i].abs() + 1.0);
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| g(p, evals)).collect();

    loop {
        // order: find best, worst, second-worst
        let mut lo = 0;
        let mut hi = 0;
        for i in 1..=n {
            if values[i] < values[lo] {
                lo = i;
            }
            if values[i] > values[hi] {
                hi = i;
            }
        }
        let mut second = lo;
        for i in 0..=n {
            if i != hi && values[i] > values[second] {
                second = i;
            }
        }

        let spread = values[hi] - values[lo];
        if spread <= rel_tol * (values[lo].abs() + 1e-12) || *evals >= budget {
            return (simplex[lo].clone(), values[lo]);
        }

        let mut centroid = vec![0.0; n];
        for (i, p) in simplex.iter().enumerate() {
            if i != hi {
                for (c, &pi) in centroid.iter_mut().zip(p) {
                    *c += pi;
                }
            }
        }
        centroid.iter_mut().for_each(|c| *c /= n as f64);

        let shifted = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[hi])
                .map(|(&c, &w)| c + coef * (c - w))
                .collect()
        };

        let xr = shifted(alpha);
        let gr = g(&xr, evals);
        if gr < values[lo] {
            let xe = shifted(beta);
            let ge = g(&xe, evals);
            if ge < gr {
                simplex[hi] = xe;
                values[hi] = ge;
            } else {
                simplex[hi] = xr;
                values[hi] = gr;
            }
        } else if gr < values[second] {
            simplex[hi] = xr;
            values[hi] = gr;
        } else if gr < values[hi] {
            let xc = shifted(gamma);
            let gc = g(&xc, evals);
            if gc <= gr {
                simplex[hi] = xc;
                values[hi] = gc;
            } else {
                shrink(&mut simplex, &mut values, lo, delta, g, evals);
            }
        } else {
            let xc = shifted(-gamma);
            let gc = g(&xc, evals);
            if gc < values[hi] {
                simplex[hi] = xc;
                values[hi] = gc;
            } else {
                shrink(&mut simplex, &mut values, lo, delta, g, evals);
            }
        }
    }
}

fn shrink<G: FnMut(&[f64], &mut usize) -> f64>(
    simplex: &mut [Vec<f64>],
    values: &mut [f64],
    lo: usize,
    delta: f64,
    g: &mut G,
    evals: &mut usize,
) {
    let best = simplex[lo].clone();
    for i in 0..simplex.len() {
        if i == lo {
            continue;
        }
        for (p, &b) in simplex[i].iter_mut().zip(&best) {
            *p = b + delta * (*p - b);
        }
        values[i] = g(&simplex[i], evals);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximizes_concave_quadratic() {
        let target = [1.5, -2.0, 0.25, 4.0];
        let out = maximize(
            |x| -x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            &[0.0; 4],
            &OptimizerConfig::default(),
        );
        assert!(out.converged);
        for (got, want) in out.x.iter().zip(&target) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn handles_neg_infinity_regions() {
        // objective undefined (-inf) for x < 0; maximum at x = 2
        let out = maximize(
            |x| {
                if x[0] < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -(x[0] - 2.0) * (x[0] - 2.0)
                }
            },
            &[0.5],
            &OptimizerConfig::default(),
        );
        assert!((out.x[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn deterministic_given_seed() {
        let rosen = |x: &[f64]| {
            -(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2))
        };
        let a = maximize(rosen, &[-1.2, 1.0], &OptimizerConfig::default());
        let b = maximize(rosen, &[-1.2, 1.0], &OptimizerConfig::default());
        assert_eq!(a.x, b.x);
        assert!((a.x[0] - 1.0).abs() < 1e-3 && (a.x[1] - 1.0).abs() < 1e-3);
    }
}

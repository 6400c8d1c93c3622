//! Empirical and Gaussian VaR / CVaR / CLVaR, plus comonotonic sample
//! construction.
//!
//! Conventions: `VaR_p(X) = inf { x : F(x) >= p }`, which on a sample of size
//! `N` is the order statistic of rank `ceil(p N)`. CVaR averages the values
//! strictly above VaR, CLVaR the values strictly below it.

use std::sync::OnceLock;

use crate::error::{Error, Result, TailSide};
use crate::stats::normal_tail_factor;

/// A finite, NaN-free sample with a lazily sorted view.
#[derive(Clone, Debug)]
pub struct EmpiricalSample {
    values: Vec<f64>,
    sorted: OnceLock<Vec<f64>>,
}

impl EmpiricalSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::NanInSample(i));
        }
        Ok(EmpiricalSample { values, sorted: OnceLock::new() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        self.sorted.get_or_init(|| {
            let mut v = self.values.clone();
            v.sort_by(f64::total_cmp);
            v
        })
    }

    /// Sample of `-X`.
    pub fn negated(&self) -> EmpiricalSample {
        EmpiricalSample {
            values: self.values.iter().map(|v| -v).collect(),
            sorted: OnceLock::new(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

fn check_level(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    Ok(())
}

/// 1-based rank `ceil(p N)`, guarded against representation error in `p N`
/// (e.g. `0.07 * 100 = 7.000000000000001`).
fn quantile_rank(p: f64, n: usize) -> usize {
    let raw = p * n as f64;
    let nearest = raw.round();
    let rank = if (raw - nearest).abs() <= 1e-9 * raw.abs().max(1.0) {
        nearest
    } else {
        raw.ceil()
    };
    (rank as usize).clamp(1, n)
}

pub fn var(sample: &EmpiricalSample, p: f64) -> Result<f64> {
    check_level(p)?;
    let sorted = sample.sorted();
    Ok(sorted[quantile_rank(p, sorted.len()) - 1])
}

pub fn cvar(sample: &EmpiricalSample, p: f64) -> Result<f64> {
    let threshold = var(sample, p)?;
    let sorted = sample.sorted();
    let start = sorted.partition_point(|&v| v <= threshold);
    let tail = &sorted[start..];
    if tail.is_empty() {
        return Err(Error::EmptyTail { side: TailSide::Upper, p });
    }
    // Extreme-first summation in both tails makes clvar(X) and -cvar(-X) bit-identical.
    Ok(tail.iter().rev().sum::<f64>() / tail.len() as f64)
}

pub fn clvar(sample: &EmpiricalSample, p: f64) -> Result<f64> {
    let threshold = var(sample, p)?;
    let sorted = sample.sorted();
    let end = sorted.partition_point(|&v| v < threshold);
    let tail = &sorted[..end];
    if tail.is_empty() {
        return Err(Error::EmptyTail { side: TailSide::Lower, p });
    }
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// `CVaR_{1-p}(-W)` for `W ~ Normal(mean, sd^2)`: `-mean + sd * phi(Phi^{-1}(p)) / p`.
pub fn gaussian_cvar_of_negative(mean: f64, sd: f64, p: f64) -> f64 {
    if sd == 0.0 {
        return -mean;
    }
    -mean + sd * normal_tail_factor(p)
}

/// Joint outcomes `(F_1^{-1}(u), ..., F_n^{-1}(u))`, one row per draw of `u`.
pub fn comonotonic_counterpart<F>(quantile_functions: &[F], u_draws: &[f64]) -> Vec<Vec<f64>>
where
    F: Fn(f64) -> f64,
{
    u_draws
        .iter()
        .map(|&u| quantile_functions.iter().map(|q| q(u)).collect())
        .collect()
}

/// The midpoint grid `(k - 1/2) / n`, `k = 1..=n`.
pub fn midpoint_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| (k as f64 - 0.5) / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{std_normal_pdf, std_normal_quantile};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn grid_1_to_100() -> EmpiricalSample {
        EmpiricalSample::new((1..=100).map(f64::from).collect()).unwrap()
    }

    fn normal_draws(n: usize, seed: u64) -> EmpiricalSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmpiricalSample::new((0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn var_examples() {
        assert_eq!(var(&grid_1_to_100(), 0.95).unwrap(), 95.0);
        let flat = EmpiricalSample::new(vec![5.0; 3]).unwrap();
        for p in [0.01, 0.5, 0.99] {
            assert_eq!(var(&flat, p).unwrap(), 5.0);
        }
        assert_eq!(var(&grid_1_to_100(), 0.07).unwrap(), 7.0);
    }

    #[test]
    fn cvar_and_clvar_examples() {
        assert_eq!(cvar(&grid_1_to_100(), 0.95).unwrap(), 98.0);
        assert_eq!(clvar(&grid_1_to_100(), 0.05).unwrap(), 2.5);
        let mut v = vec![0.0; 9];
        v.push(1.0);
        assert_eq!(cvar(&EmpiricalSample::new(v).unwrap(), 0.5).unwrap(), 1.0);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(EmpiricalSample::new(vec![]), Err(Error::EmptySample)));
        assert!(matches!(EmpiricalSample::new(vec![1.0, f64::NAN]), Err(Error::NanInSample(1))));
        let s = grid_1_to_100();
        assert!(matches!(var(&s, 0.0), Err(Error::InvalidProbability(_))));
        assert!(matches!(var(&s, 1.0), Err(Error::InvalidProbability(_))));
        let flat = EmpiricalSample::new(vec![5.0; 3]).unwrap();
        assert!(matches!(cvar(&flat, 0.5), Err(Error::EmptyTail { side: TailSide::Upper, .. })));
        assert!(matches!(clvar(&flat, 0.5), Err(Error::EmptyTail { side: TailSide::Lower, .. })));
    }

    #[test]
    fn normal_draws_match_analytic_quantiles() {
        let s = normal_draws(1_000_000, 3);
        assert!((var(&s, 0.95).unwrap() - 1.6449).abs() < 0.01);
        let tail = std_normal_pdf(std_normal_quantile(0.95)) / 0.05;
        assert!((tail - 2.0627).abs() < 1e-4);
        assert!((cvar(&s, 0.95).unwrap() - tail).abs() < 0.02);
        assert!((clvar(&s, 0.05).unwrap() + tail).abs() < 0.02);
    }

    #[test]
    fn gaussian_cvar_examples() {
        assert_eq!(gaussian_cvar_of_negative(0.0, 0.0, 0.05), 0.0);
        assert!((gaussian_cvar_of_negative(0.0, 1.0, 0.05) - 2.0627).abs() < 1e-4);
    }

    #[test]
    fn gaussian_cvar_matches_monte_carlo() {
        let (mean, sd, p) = (1.0, 2.0, 0.05);
        let n = 400_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let neg: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                -(mean + sd * z)
            })
            .collect();
        let sample = EmpiricalSample::new(neg).unwrap();
        let mc = cvar(&sample, 1.0 - p).unwrap();
        // standard error of a tail mean over p*n points, inflated for the VaR estimate
        let tail_n = (p * n as f64) as f64;
        let se = 2.0 * sd / tail_n.sqrt();
        assert!((mc - gaussian_cvar_of_negative(mean, sd, p)).abs() < 3.0 * se);
    }

    #[test]
    fn comonotonic_counterpart_shapes() {
        let u = midpoint_grid(4);
        let uniform = |u: f64| u;
        let rows = comonotonic_counterpart(&[uniform, uniform], &u);
        assert!(rows.iter().all(|r| r[0] == r[1]));
        let single = comonotonic_counterpart(&[|u: f64| -(1.0 - u).ln()], &u);
        assert_eq!(single.len(), 4);
        assert!((single[0][0] + (0.875f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn comonotonic_lognormal_var_is_additive() {
        let n = 10_000;
        let u = midpoint_grid(n);
        let q1 = |u: f64| (0.1 + 0.3 * std_normal_quantile(u)).exp();
        let q2 = |u: f64| (-0.2 + 0.6 * std_normal_quantile(u)).exp();
        let marginals: [&dyn Fn(f64) -> f64; 2] = [&q1, &q2];
        let rows = comonotonic_counterpart(&marginals, &u);
        let col = |k: usize| EmpiricalSample::new(rows.iter().map(|r| r[k]).collect()).unwrap();
        let sum = EmpiricalSample::new(rows.iter().map(|r| r[0] + r[1]).collect()).unwrap();
        for p in [0.05, 0.5, 0.95] {
            let lhs = var(&sum, p).unwrap();
            let rhs = var(&col(0), p).unwrap() + var(&col(1), p).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9);
            let lhs = cvar(&sum, p).unwrap();
            let rhs = cvar(&col(0), p).unwrap() + cvar(&col(1), p).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn clvar_cvar_duality(values in prop::collection::vec(-1e3f64..1e3, 2..200), p in 0.01f64..0.99) {
                // At integer p*N the two generalized inverses pick adjacent order statistics.
                let pn = p * values.len() as f64;
                prop_assume!((pn - pn.round()).abs() > 1e-6);
                let s = EmpiricalSample::new(values).unwrap();
                match (clvar(&s, p), cvar(&s.negated(), 1.0 - p)) {
                    (Ok(lhs), Ok(rhs)) => prop_assert_eq!(lhs, -rhs),
                    (Err(_), Err(_)) => {}
                    (l, r) => prop_assert!(false, "mismatch {:?} vs {:?}", l, r),
                }
            }

            #[test]
            fn var_cvar_monotone_in_p(values in prop::collection::vec(-1e3f64..1e3, 2..200), p in 0.01f64..0.9, dp in 0.0f64..0.09) {
                let s = EmpiricalSample::new(values).unwrap();
                prop_assert!(var(&s, p).unwrap() <= var(&s, p + dp).unwrap());
                if let (Ok(lo), Ok(hi)) = (cvar(&s, p), cvar(&s, p + dp)) {
                    prop_assert!(lo <= hi + 1e-9);
                }
            }

            #[test]
            fn var_is_affine_equivariant(values in prop::collection::vec(-1e3f64..1e3, 1..200), p in 0.01f64..0.99, a in 0.1f64..10.0, b in -50.0f64..50.0) {
                let s = EmpiricalSample::new(values.clone()).unwrap();
                let t = EmpiricalSample::new(values.iter().map(|v| a * v + b).collect()).unwrap();
                let lhs = var(&t, p).unwrap();
                let rhs = a * var(&s, p).unwrap() + b;
                prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            }
        }
    }
}

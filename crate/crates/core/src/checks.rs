//! Statistical batteries comparing the comonotonic lower bound with simulated
//! terminal wealth, and checking quantile additivity of comonotonic sums.

use serde::{Deserialize, Serialize};

use crate::bound::{bound_coefficients, lower_bound_mean, lower_bound_terms, lower_bound_value, InvestmentPlan};
use crate::error::Result;
use crate::model::{JumpLaw, MarketSpec, ModelParams};
use crate::risk::{comonotonic_counterpart, midpoint_grid, var, EmpiricalSample};
use crate::simulator::sample_terminal_wealth;
use crate::stats::{mean_and_std_error, std_normal_quantile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Observed discrepancy (sign convention per check).
    pub statistic: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        CheckOutcome { name: name.into(), passed: statistic <= tolerance, statistic, tolerance }
    }
}

/// Two-asset market with common and idiosyncratic jumps used by the batteries.
pub fn reference_market(lambda_common: f64, lambda_idio: f64) -> Result<ModelParams> {
    let law = JumpLaw::Normal { mean: -0.05, variance: 0.01 };
    let spec = MarketSpec::without_jumps(
        0.03,
        vec![0.05, 0.03],
        vec![0.2, 0.3],
        vec![vec![1.0, 1.0 / 6.0], vec![1.0 / 6.0, 1.0]],
    )
    .with_jumps(lambda_common, vec![law; 2], vec![lambda_idio; 2], vec![law; 2]);
    ModelParams::new(spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexOrderReport {
    pub mc_mean: f64,
    pub mc_std_error: f64,
    pub bound_mean: f64,
    /// `(d, E[(W^L - d)+], E[(W - d)+], standard error of the latter)`.
    pub stop_loss: Vec<(f64, f64, f64, f64)>,
    pub outcomes: Vec<CheckOutcome>,
}

/// `E[g(Z)]` for standard normal `Z` by the midpoint rule in probability space.
fn normal_expectation(nodes: usize, g: impl Fn(f64) -> f64) -> f64 {
    midpoint_grid(nodes).into_iter().map(|u| g(std_normal_quantile(u))).sum::<f64>() / nodes as f64
}

/// Mean equality and stop-loss dominance of the lower bound `W^L` against
/// simulated `W_tau`, at `d_points` values of `d` on the empirical quantile
/// grid `k / (d_points + 1)`.
pub fn convex_order_battery(
    params: &ModelParams,
    plan: &InvestmentPlan,
    x: &[f64],
    n_paths: usize,
    seed: u64,
    d_points: usize,
) -> Result<ConvexOrderReport> {
    let coeffs = bound_coefficients(params, plan, x)?;
    let paths = sample_terminal_wealth(params, plan, x, n_paths, seed)?;
    let wealth: Vec<f64> = paths.iter().map(|p| p.terminal_wealth).collect();
    let (mc_mean, mc_std_error) = mean_and_std_error(&wealth);
    let bound_mean = lower_bound_mean(&coeffs);

    let mut outcomes = vec![CheckOutcome::new(
        "mean_equality",
        (mc_mean - bound_mean).abs(),
        3.0 * mc_std_error,
    )];

    let sample = EmpiricalSample::new(wealth)?;
    let mut stop_loss = Vec::with_capacity(d_points);
    for k in 1..=d_points {
        let d = var(&sample, k as f64 / (d_points + 1) as f64)?;
        let excess: Vec<f64> = sample.values().iter().map(|w| (w - d).max(0.0)).collect();
        let (mc, se) = mean_and_std_error(&excess);
        let bound = normal_expectation(100_000, |z| (lower_bound_value(&coeffs, z) - d).max(0.0));
        outcomes.push(CheckOutcome::new(format!("stop_loss_d{k}"), bound - mc, 3.0 * se));
        stop_loss.push((d, bound, mc, se));
    }
    Ok(ConvexOrderReport { mc_mean, mc_std_error, bound_mean, stop_loss, outcomes })
}

/// Comonotonic additivity of VaR on a deterministic grid of `n` points, for two
/// lognormal marginals and for the tranche terms of a lower bound.
pub fn additivity_battery(n: usize, levels: &[f64], tolerance: f64) -> Result<Vec<CheckOutcome>> {
    let ln1 = |u: f64| (0.05 + 0.2 * std_normal_quantile(u)).exp();
    let ln2 = |u: f64| (-0.1 + 0.5 * std_normal_quantile(u)).exp();
    let marginals: [&dyn Fn(f64) -> f64; 2] = [&ln1, &ln2];
    let grid = midpoint_grid(n);
    let rows = comonotonic_counterpart(&marginals, &grid);

    let params = reference_market(0.3, 0.2)?;
    let plan = InvestmentPlan::new(6, vec![1.0; 6], 0.05, 1.0)?;
    let coeffs = bound_coefficients(&params, &plan, &[0.5, 0.3])?;
    let term_rows: Vec<Vec<f64>> = grid.iter().map(|&u| lower_bound_terms(&coeffs, std_normal_quantile(u))).collect();

    let mut outcomes = Vec::new();
    for (label, rows) in [("lognormal_pair", &rows), ("bound_tranches", &term_rows)] {
        let width = rows[0].len();
        let columns: Vec<EmpiricalSample> = (0..width)
            .map(|j| EmpiricalSample::new(rows.iter().map(|r| r[j]).collect()))
            .collect::<Result<_>>()?;
        let total = EmpiricalSample::new(rows.iter().map(|r| r.iter().sum()).collect())?;
        for &p in levels {
            let separate: f64 = columns.iter().map(|c| var(c, p)).sum::<Result<f64>>()?;
            let joint = var(&total, p)?;
            outcomes.push(CheckOutcome::new(format!("{label}_p{p}"), (joint - separate).abs(), tolerance));
        }
    }
    Ok(outcomes)
}

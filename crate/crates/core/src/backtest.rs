//! Period-by-period replay of the dynamic allocation on historical prices.
//!
//! At the start of period `l` the wealth `W_{l-1}` is split into share volumes
//! `f = W x / S_b` and a cash position `W (1 - sum x)`. At the end of the
//! period the holdings are marked at `S_e`, the next endowment is added, and
//! the allocation is re-solved for the new wealth.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::InvestmentPlan;
use crate::calibration::{calibrate, CalibrationConfig};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::optimizer::{solve_with, Binding, SolverOptions, SolverReport};
use crate::panel::{Period, PricePanel};

/// `K = k* sum_{i=1}^{tau} e^{(tau - i + 1) r / tau}`.
pub fn stop_loss_floor(k_star: f64, tau: usize, r: f64) -> f64 {
    k_star * risk_free_benchmark(tau, r)
}

/// `sum_{i=1}^{tau} e^{(tau - i + 1) r / tau}`: unit endowments compounded at the
/// rate used by the stop-loss floor.
pub fn risk_free_benchmark(tau: usize, r: f64) -> f64 {
    let t = tau as f64;
    (1..=tau).map(|i| ((t - i as f64 + 1.0) * r / t).exp()).sum()
}

/// Where model parameters come from during a backtest.
#[derive(Clone, Debug)]
pub enum CalibrationPolicy {
    Fixed(ModelParams),
    /// Calibrate once on the rows before the first backtest period.
    FixedWindow(CalibrationConfig),
    /// Re-calibrate at each period start on the rows before it.
    Rolling(CalibrationConfig),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestOptions {
    /// First date of the first period; `None` starts at the first row.
    pub start: Option<NaiveDate>,
    /// Grow the cash position by `e^{r / tau}` per period.
    pub cash_interest: bool,
    pub solver: SolverOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    /// 1-based period index `l`.
    pub period: usize,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    /// `W_{l-1}`.
    pub wealth_start: f64,
    pub x: Vec<f64>,
    pub q: f64,
    pub binding: Binding,
    /// Shares bought at `S_b`.
    pub volumes: Vec<f64>,
    pub cash: f64,
    pub s_begin: Vec<f64>,
    pub s_end: Vec<f64>,
    /// Endowment added at the end of the period (`alpha_l`, zero for `l = tau`).
    pub endowment: f64,
    /// `W_l`.
    pub wealth: f64,
    /// `(W_l - invested) / invested * 100`, invested = `alpha_0 + .. + alpha_l`.
    pub return_pct: f64,
    pub solver: SolverReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum BacktestStatus {
    Completed,
    Failed { period: usize, kind: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub tickers: Vec<String>,
    pub k_star: f64,
    pub floor: f64,
    pub r: f64,
    pub cash_interest: bool,
    pub rows: Vec<LedgerRow>,
    pub status: BacktestStatus,
    /// `W_tau`, when every period completed.
    pub terminal_wealth: Option<f64>,
    pub total_endowment: f64,
    /// `(W_tau - sum alpha) / sum alpha * 100`.
    pub return_pct: Option<f64>,
    /// `(W_tau - B) / B * 100` with `B = sum_i e^{(tau - i + 1) r / tau}` the
    /// risk-free benchmark of the stop-loss floor.
    pub benchmark_return_pct: Option<f64>,
    /// Per-period rate `g` solving `sum_i alpha_i (1 + g)^{tau - i} = W_tau`.
    pub internal_rate: Option<f64>,
}

/// The `tau` backtest periods of `panel`, starting at `start`.
pub fn backtest_periods(panel: &PricePanel, start: Option<NaiveDate>, tau: usize) -> Result<Vec<Period>> {
    let from = start.map_or(0, |d| panel.position_of(d));
    let periods: Vec<Period> = panel
        .monthly_periods()
        .into_iter()
        .filter(|p| p.start >= from)
        .take(tau)
        .collect();
    if periods.len() < tau {
        return Err(Error::PriceData(format!(
            "{} monthly periods from the start date, {tau} required",
            periods.len()
        )));
    }
    Ok(periods)
}

fn params_for(policy: &CalibrationPolicy, panel: &PricePanel, before_row: usize, cache: &mut Option<ModelParams>) -> Result<ModelParams> {
    match policy {
        CalibrationPolicy::Fixed(p) => Ok(p.clone()),
        CalibrationPolicy::FixedWindow(config) => {
            if cache.is_none() {
                *cache = Some(calibrate(&panel.rows(0..before_row), config)?);
            }
            Ok(cache.clone().expect("cached"))
        }
        CalibrationPolicy::Rolling(config) => calibrate(&panel.rows(0..before_row), config),
    }
}

/// Runs the dynamic strategy with `plan` positioned at `l = 1`, `w_0 = alpha_0`.
///
/// Errors on invalid inputs or too few periods; a failed solve or calibration
/// at some period ends the ledger early with a `Failed` status.
pub fn run_backtest(
    panel: &PricePanel,
    policy: &CalibrationPolicy,
    plan: &InvestmentPlan,
    options: &BacktestOptions,
) -> Result<BacktestLedger> {
    plan.validate()?;
    let tau = plan.tau;
    let periods = backtest_periods(panel, options.start, tau)?;
    if let CalibrationPolicy::Fixed(p) = policy {
        if p.m() != panel.m() {
            return Err(Error::DimensionMismatch { expected: panel.m(), got: p.m() });
        }
    }

    let mut ledger = BacktestLedger {
        tickers: panel.tickers().to_vec(),
        k_star: plan.k_star,
        floor: plan.floor,
        r: f64::NAN,
        cash_interest: options.cash_interest,
        rows: Vec::with_capacity(tau),
        status: BacktestStatus::Completed,
        terminal_wealth: None,
        total_endowment: plan.total_endowment(),
        return_pct: None,
        benchmark_return_pct: None,
        internal_rate: None,
    };

    let mut cache = None;
    let mut wealth = plan.alpha[0];
    let mut invested = plan.alpha[0];
    for (idx, period) in periods.iter().enumerate() {
        let l = idx + 1;
        let step = params_for(policy, panel, period.start, &mut cache).and_then(|params| {
            let at = plan.clone().at_period(l, wealth)?;
            let report = solve_with(&params, &at, options.solver)?;
            Ok((params, report))
        });
        let (params, report) = match step {
            Ok(v) => v,
            Err(e) => {
                ledger.status = BacktestStatus::Failed { period: l, kind: e.kind().into(), message: e.to_string() };
                return Ok(ledger);
            }
        };
        ledger.r = params.r();

        let x = report.allocation.x.clone();
        let s_b = panel.s_begin(period).to_vec();
        let s_e = panel.s_end(period).to_vec();
        let volumes: Vec<f64> = x.iter().zip(&s_b).map(|(xj, sb)| wealth * xj / sb).collect();
        let cash = wealth * (1.0 - x.iter().sum::<f64>());
        let cash_growth = if options.cash_interest { (params.r() / tau as f64).exp() } else { 1.0 };
        let endowment = if l < tau { plan.alpha[l] } else { 0.0 };
        let marked: f64 = volumes.iter().zip(&s_e).map(|(f, se)| f * se).sum();
        let next = marked + cash * cash_growth + endowment;
        invested += endowment;

        ledger.rows.push(LedgerRow {
            period: l,
            first_date: period.first_date,
            last_date: period.last_date,
            wealth_start: wealth,
            x,
            q: report.q,
            binding: report.binding,
            volumes,
            cash,
            s_begin: s_b,
            s_end: s_e,
            endowment,
            wealth: next,
            return_pct: (next - invested) / invested * 100.0,
            solver: report,
        });
        wealth = next;
    }

    let total = plan.total_endowment();
    let benchmark = risk_free_benchmark(tau, ledger.r);
    ledger.terminal_wealth = Some(wealth);
    ledger.return_pct = Some((wealth - total) / total * 100.0);
    ledger.benchmark_return_pct = Some((wealth - benchmark) / benchmark * 100.0);
    ledger.internal_rate = internal_rate(&plan.alpha, wealth);
    Ok(ledger)
}

/// Per-period rate `g` with `sum_i alpha_i (1 + g)^{tau - i} = terminal`, by bisection.
pub fn internal_rate(alpha: &[f64], terminal: f64) -> Option<f64> {
    let tau = alpha.len();
    let value = |g: f64| -> f64 {
        alpha.iter().enumerate().map(|(i, a)| a * (1.0 + g).powi((tau - i) as i32)).sum::<f64>() - terminal
    };
    let (mut lo, mut hi) = (-0.999_999, 1.0);
    while value(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return None;
        }
    }
    if value(lo) > 0.0 || !(terminal > 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if value(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// One backtest per stop-loss rate, run concurrently; results follow `k_stars` order.
pub fn k_star_sweep(
    panel: &PricePanel,
    policy: &CalibrationPolicy,
    plan: &InvestmentPlan,
    r: f64,
    k_stars: &[f64],
    options: &BacktestOptions,
) -> Result<Vec<BacktestLedger>> {
    k_stars
        .par_iter()
        .map(|&k| run_backtest(panel, policy, &plan.clone().with_stop_loss(k, r), options))
        .collect()
}

/// Row of the stop-loss sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k_star: f64,
    pub wealth: Vec<f64>,
    pub return_pct: Option<f64>,
    pub benchmark_return_pct: Option<f64>,
    pub status: BacktestStatus,
}

impl From<&BacktestLedger> for SweepRow {
    fn from(l: &BacktestLedger) -> Self {
        SweepRow {
            k_star: l.k_star,
            wealth: l.rows.iter().map(|r| r.wealth).collect(),
            return_pct: l.return_pct,
            benchmark_return_pct: l.benchmark_return_pct,
            status: l.status.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarketSpec;
    use chrono::Days;

    fn panel(rows: Vec<Vec<f64>>, start: NaiveDate) -> PricePanel {
        let dates = (0..rows.len()).map(|k| start + Days::new(k as u64 * 7)).collect();
        let m = rows[0].len();
        PricePanel::new((0..m).map(|j| format!("S{j}")).collect(), dates, rows).unwrap()
    }

    fn market(a: [f64; 2]) -> ModelParams {
        let mut spec = MarketSpec::without_jumps(
            0.03,
            a.to_vec(),
            vec![0.2, 0.3],
            vec![vec![1.0, 1.0 / 6.0], vec![1.0 / 6.0, 1.0]],
        );
        spec.a = None;
        ModelParams::new(spec).unwrap()
    }

    fn plan() -> InvestmentPlan {
        InvestmentPlan::new(6, vec![1.0; 6], 0.05, 1.0).unwrap()
    }

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 8, 3).unwrap()
    }

    #[test]
    fn stop_loss_floor_examples() {
        assert_eq!(stop_loss_floor(0.0, 6, 0.03), 0.0);
        assert_eq!(stop_loss_floor(0.9, 6, 0.0), 0.9 * 6.0);
        let hand = 0.95 * [0.03f64, 0.025, 0.02, 0.015, 0.01, 0.005].iter().map(|e| e.exp()).sum::<f64>();
        assert!((stop_loss_floor(0.95, 6, 0.03) - hand).abs() < 1e-14);
    }

    #[test]
    fn benchmark_return_reproduces_published_column() {
        // Published terminal wealth and return pairs for k* = 0.50, 0.85, 0.90, 0.95.
        let b = risk_free_benchmark(6, 0.03);
        for (w, ret) in [(7.7254, 26.5194), (7.6366, 25.0651), (7.3012, 19.5722), (6.8801, 12.6758)] {
            let got = (w - b) / b * 100.0;
            // Wealth is published to 4 decimals: 5e-5 / 6.1 * 100 < 1e-3.
            assert!((got - ret).abs() < 1e-3, "{got} vs {ret}");
        }
    }

    #[test]
    fn constant_prices_add_endowments() {
        let rows = vec![vec![10.0, 20.0]; 30];
        let p = panel(rows, start());
        for k in [0.5, 0.95] {
            let pl = plan().with_stop_loss(k, 0.03);
            let ledger = run_backtest(&p, &CalibrationPolicy::Fixed(market([0.05, 0.03])), &pl, &BacktestOptions::default()).unwrap();
            assert_eq!(ledger.status, BacktestStatus::Completed);
            for (i, row) in ledger.rows.iter().enumerate() {
                let expected = (i + 2).min(6) as f64;
                assert!((row.wealth - expected).abs() < 1e-12, "{} vs {expected}", row.wealth);
            }
            assert!((ledger.terminal_wealth.unwrap() - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_drift_market_holds_cash() {
        let rows: Vec<Vec<f64>> = (0..30).map(|k| vec![10.0 + k as f64, 20.0 - 0.3 * k as f64]).collect();
        let p = panel(rows, start());
        let ledger = run_backtest(&p, &CalibrationPolicy::Fixed(market([0.0, 0.0])), &plan(), &BacktestOptions::default()).unwrap();
        assert!(ledger.rows.iter().all(|r| r.x == vec![0.0, 0.0]));
        assert_eq!(ledger.terminal_wealth, Some(6.0));
        assert_eq!(ledger.return_pct, Some(0.0));
    }

    #[test]
    fn ledger_reconstructs_from_volumes() {
        let rows: Vec<Vec<f64>> = (0..30).map(|k| vec![10.0 * (1.0 + 0.02 * k as f64), 20.0 + (k as f64).sin()]).collect();
        let p = panel(rows, start());
        for cash_interest in [false, true] {
            let options = BacktestOptions { cash_interest, ..BacktestOptions::default() };
            let pl = plan().with_stop_loss(0.5, 0.03);
            let ledger = run_backtest(&p, &CalibrationPolicy::Fixed(market([0.05, 0.03])), &pl, &options).unwrap();
            let g = if cash_interest { (0.03f64 / 6.0).exp() } else { 1.0 };
            let mut prev = 1.0;
            for row in &ledger.rows {
                assert_eq!(row.wealth_start, prev);
                for j in 0..2 {
                    assert!((row.volumes[j] - row.wealth_start * row.x[j] / row.s_begin[j]).abs() <= 1e-10);
                }
                let marked: f64 = row.volumes.iter().zip(&row.s_end).map(|(f, s)| f * s).sum();
                assert!((marked + row.cash * g + row.endowment - row.wealth).abs() <= 1e-10);
                let profit: f64 = row.volumes.iter().zip(row.s_end.iter().zip(&row.s_begin)).map(|(f, (e, b))| f * (e - b)).sum();
                let interest = row.cash * (g - 1.0);
                assert!((row.wealth - row.endowment - row.wealth_start - profit - interest).abs() <= 1e-10);
                prev = row.wealth;
            }
        }
    }

    #[test]
    fn infeasible_floor_truncates_ledger() {
        let rows = vec![vec![10.0, 20.0]; 30];
        let p = panel(rows, start());
        let pl = plan().with_floor(100.0);
        let ledger = run_backtest(&p, &CalibrationPolicy::Fixed(market([0.05, 0.03])), &pl, &BacktestOptions::default()).unwrap();
        assert!(ledger.rows.is_empty());
        assert!(matches!(ledger.status, BacktestStatus::Failed { period: 1, .. }));
        assert_eq!(ledger.terminal_wealth, None);
    }

    #[test]
    fn too_few_periods_is_an_error() {
        let rows = vec![vec![10.0, 20.0]; 10];
        let p = panel(rows, start());
        assert!(run_backtest(&p, &CalibrationPolicy::Fixed(market([0.05, 0.03])), &plan(), &BacktestOptions::default()).is_err());
    }

    #[test]
    fn internal_rate_inverts_compounding() {
        let alpha = vec![1.0; 6];
        let g = 0.04;
        let w: f64 = (0..6).map(|i| (1.0f64 + g).powi(6 - i)).sum();
        assert!((internal_rate(&alpha, w).unwrap() - g).abs() < 1e-12);
        assert!(internal_rate(&alpha, 0.0).is_none());
    }
}

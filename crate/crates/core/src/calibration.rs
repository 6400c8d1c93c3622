//! Estimation of model parameters from a daily price panel.
//!
//! Jumps are found by thresholding each daily log-return against a rolling
//! median and standard deviation of its neighbours. Days on which enough
//! assets jump together count as common jumps; the remaining flags are
//! idiosyncratic. Diffusion parameters come from the days with no flags.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{JumpLaw, MarketSpec, ModelParams};
use crate::panel::PricePanel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// `kappa`: a return is a jump when `|r - median| > kappa * std`.
    pub jump_threshold_multiplier: f64,
    /// Most recent trading-day returns used; `None` uses the whole panel.
    pub window: Option<usize>,
    /// Neighbouring returns in the rolling median / std (the day itself excluded).
    pub rolling_window: usize,
    /// Trading days per model period.
    pub days_per_period: f64,
    /// Minimum fraction of assets flagged on one day for a common jump.
    pub common_jump_rule: f64,
    /// Risk-free rate per period.
    pub r: f64,
    /// Subtract the expected number of threshold exceedances of a jump-free
    /// series from each jump count.
    pub false_alarm_correction: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            jump_threshold_multiplier: 3.0,
            window: None,
            rolling_window: 20,
            days_per_period: 21.0,
            common_jump_rule: 1.0,
            r: 0.03,
            false_alarm_correction: true,
        }
    }
}

const MIN_OBSERVATIONS: usize = 30;

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.jump_threshold_multiplier > 0.0) {
            return Err(Error::invalid("jump_threshold_multiplier", "must be > 0"));
        }
        if let Some(w) = self.window {
            if w < MIN_OBSERVATIONS {
                return Err(Error::invalid("window", format!("{w} < {MIN_OBSERVATIONS} observations")));
            }
        }
        if self.rolling_window < 3 {
            return Err(Error::invalid("rolling_window", "need at least 3 neighbours"));
        }
        if !(self.days_per_period > 0.0) {
            return Err(Error::invalid("days_per_period", "must be > 0"));
        }
        if !(self.common_jump_rule > 0.0 && self.common_jump_rule <= 1.0) {
            return Err(Error::invalid("common_jump_rule", "must lie in (0, 1]"));
        }
        if !self.r.is_finite() {
            return Err(Error::invalid("r", "must be finite"));
        }
        Ok(())
    }

    /// Probability that a jump-free return is flagged.
    ///
    /// With `w` neighbours, `r - median` has variance about `sigma^2 (1 + pi / (2w))`
    /// and the neighbour standard deviation carries `w - 1` degrees of freedom.
    pub fn false_alarm_probability(&self) -> f64 {
        let w = self.rolling_window as f64;
        let scale = (1.0 + std::f64::consts::PI / (2.0 * w)).sqrt();
        let t = StudentsT::new(0.0, 1.0, w - 1.0).expect("valid degrees of freedom");
        2.0 * (1.0 - t.cdf(self.jump_threshold_multiplier / scale))
    }
}

/// Jump flags and their classification, kept for diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpDetection {
    /// `flags[t][j]`: return `t` of asset `j` exceeded the threshold.
    pub flags: Vec<Vec<bool>>,
    pub common_days: Vec<usize>,
    /// Per asset, days with an idiosyncratic jump.
    pub idio_days: Vec<Vec<usize>>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// The `w` indices nearest to `t`, excluding `t`, clamped to `0..n`.
fn neighbours(t: usize, w: usize, n: usize) -> impl Iterator<Item = usize> {
    let w = w.min(n - 1);
    let lo = t.saturating_sub(w / 2).min(n - 1 - w);
    (lo..=lo + w).filter(move |&k| k != t)
}

pub fn detect_jumps(returns: &[Vec<f64>], config: &CalibrationConfig) -> JumpDetection {
    let n = returns.len();
    let m = returns.first().map_or(0, Vec::len);
    let mut flags = vec![vec![false; m]; n];
    for j in 0..m {
        let series: Vec<f64> = returns.iter().map(|r| r[j]).collect();
        for t in 0..n {
            let mut window: Vec<f64> = neighbours(t, config.rolling_window, n).map(|k| series[k]).collect();
            if window.len() < 2 {
                continue;
            }
            window.sort_by(f64::total_cmp);
            let sd = variance(&window).sqrt();
            flags[t][j] = (series[t] - median(&window)).abs() > config.jump_threshold_multiplier * sd;
        }
    }

    let needed = ((config.common_jump_rule * m as f64) - 1e-9).ceil().max(2.0) as usize;
    let mut common_days = Vec::new();
    let mut idio_days = vec![Vec::new(); m];
    for (t, row) in flags.iter().enumerate() {
        let count = row.iter().filter(|&&f| f).count();
        if count >= needed {
            common_days.push(t);
        } else {
            for (j, &f) in row.iter().enumerate() {
                if f {
                    idio_days[j].push(t);
                }
            }
        }
    }
    JumpDetection { flags, common_days, idio_days }
}

/// Normal law fitted to jump-day returns net of a day's drift and diffusion noise.
fn fit_law(values: &[f64], daily_mean: f64, daily_var: f64) -> JumpLaw {
    match values.len() {
        0 => JumpLaw::ZERO,
        1 => JumpLaw::Normal { mean: values[0] - daily_mean, variance: 0.0 },
        _ => JumpLaw::Normal {
            mean: mean(values) - daily_mean,
            variance: (variance(values) - daily_var).max(0.0),
        },
    }
}

/// Full calibration output.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub params: ModelParams,
    pub detection: JumpDetection,
    /// Number of daily returns used.
    pub observations: usize,
}

pub fn calibrate(panel: &PricePanel, config: &CalibrationConfig) -> Result<ModelParams> {
    Ok(calibrate_detailed(panel, config)?.params)
}

pub fn calibrate_detailed(panel: &PricePanel, config: &CalibrationConfig) -> Result<Calibration> {
    config.validate()?;
    let all = panel.log_returns();
    let returns = match config.window {
        Some(w) if w < all.len() => all[all.len() - w..].to_vec(),
        _ => all,
    };
    let n = returns.len();
    if n < MIN_OBSERVATIONS {
        return Err(Error::Calibration(format!(
            "{n} daily returns; at least {MIN_OBSERVATIONS} required"
        )));
    }
    let m = panel.m();
    let detection = detect_jumps(&returns, config);

    let clean: Vec<&Vec<f64>> = returns
        .iter()
        .zip(&detection.flags)
        .filter(|(_, f)| !f.iter().any(|&b| b))
        .map(|(r, _)| r)
        .collect();
    if clean.len() < 2 {
        return Err(Error::Calibration(format!("{} jump-free days; at least 2 required", clean.len())));
    }
    let k = clean.len() as f64;
    let means: Vec<f64> = (0..m).map(|j| clean.iter().map(|r| r[j]).sum::<f64>() / k).collect();
    let mut cov = vec![vec![0.0; m]; m];
    for r in &clean {
        for i in 0..m {
            for j in 0..m {
                cov[i][j] += (r[i] - means[i]) * (r[j] - means[j]) / (k - 1.0);
            }
        }
    }
    if let Some(j) = (0..m).find(|&j| !(cov[j][j] > 0.0)) {
        return Err(Error::Calibration(format!("zero variance for {}", panel.tickers()[j])));
    }
    let daily_sd: Vec<f64> = (0..m).map(|j| cov[j][j].sqrt()).collect();
    let rho: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| if i == j { 1.0 } else { cov[i][j] / (daily_sd[i] * daily_sd[j]) })
                .collect()
        })
        .collect();

    let d = config.days_per_period;
    let alarm = if config.false_alarm_correction { config.false_alarm_probability() } else { 0.0 };
    let rate = |count: usize, expected_false: f64| ((count as f64 - expected_false).max(0.0) / n as f64) * d;

    let lambda_common = rate(detection.common_days.len(), 0.0);
    let mut common_laws = Vec::with_capacity(m);
    let mut lambda_idio = Vec::with_capacity(m);
    let mut idio_laws = Vec::with_capacity(m);
    for j in 0..m {
        let on_common: Vec<f64> = detection.common_days.iter().map(|&t| returns[t][j]).collect();
        common_laws.push(fit_law(&on_common, means[j], cov[j][j]));
        let on_idio: Vec<f64> = detection.idio_days[j].iter().map(|&t| returns[t][j]).collect();
        lambda_idio.push(rate(on_idio.len(), alarm * n as f64));
        idio_laws.push(fit_law(&on_idio, means[j], cov[j][j]));
    }
    if lambda_common == 0.0 {
        common_laws = vec![JumpLaw::ZERO; m];
    }

    let sigma: Vec<f64> = daily_sd.iter().map(|s| s * d.sqrt()).collect();
    let mut mu = Vec::with_capacity(m);
    let mut a = Vec::with_capacity(m);
    for j in 0..m {
        let a_j = means[j] * d + 0.5 * sigma[j] * sigma[j] - config.r;
        a.push(a_j);
        mu.push(a_j + lambda_common * common_laws[j].h_moment() + lambda_idio[j] * idio_laws[j].h_moment());
    }
    let mut spec = MarketSpec::without_jumps(config.r, mu, sigma, rho).with_jumps(
        lambda_common,
        common_laws,
        lambda_idio,
        idio_laws,
    );
    spec.a = Some(a);
    let params = ModelParams::new(spec).map_err(|e| match e {
        Error::NotPositiveDefinite => Error::Calibration("sample correlation matrix is singular".into()),
        other => other,
    })?;
    Ok(Calibration { params, detection, observations: n })
}

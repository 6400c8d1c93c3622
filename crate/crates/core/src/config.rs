//! Run configuration shared by the command-line tools.
//!
//! A JSON file with optional sections; anything omitted takes the default
//! below. Exactly one of `model` and `calibration` must be set.
//!
//! ```json
//! {
//!   "model": { "r": 0.03, "mu": [...], "sigma": [...], "rho": [[...]], ... },
//!   "calibration": { "jump_threshold_multiplier": 3.0, ... },
//!   "prices": "prices.csv",
//!   "plan": { "tau": 6, "alpha": [1, 1, 1, 1, 1, 1], "p": 0.05,
//!             "k_star": [0.5, 0.85, 0.9, 0.95], "c0": 1.0, "r": 0.03 },
//!   "simulation": { "paths": 100000, "seed": 7, "dt": 0.001 },
//!   "backtest": { "start": "2020-08-01", "cash_interest": false,
//!                 "calibration_timing": "fixed" },
//!   "out_dir": "out"
//! }
//! ```

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bound::{InvestmentPlan, LambdaWeighting};
use crate::calibration::CalibrationConfig;
use crate::error::{Error, Result};
use crate::model::MarketSpec;
use crate::optimizer::C9Convention;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub tau: usize,
    /// Endowments; `None` means one unit per period.
    pub alpha: Option<Vec<f64>>,
    pub p: f64,
    pub k_star: Vec<f64>,
    pub c0: f64,
    /// Overrides the model's or calibration's risk-free rate when set.
    pub r: Option<f64>,
    pub l: usize,
    /// Wealth at the start of period `l`; `None` means `alpha_{l-1}`.
    pub w_prev: Option<f64>,
    pub weighting: LambdaWeighting,
    pub c9: C9Convention,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            tau: 6,
            alpha: None,
            p: 0.05,
            k_star: vec![0.5, 0.85, 0.9, 0.95],
            c0: 1.0,
            r: None,
            l: 1,
            w_prev: None,
            weighting: LambdaWeighting::Literal,
            c9: C9Convention::Derived,
        }
    }
}

impl PlanConfig {
    pub fn alpha(&self) -> Vec<f64> {
        self.alpha.clone().unwrap_or_else(|| vec![1.0; self.tau])
    }

    /// Plan at period `l` with the floor of the first stop-loss rate.
    pub fn plan(&self, r: f64) -> Result<InvestmentPlan> {
        let k = self.k_star.first().copied().unwrap_or(0.0);
        self.plan_for(k, r)
    }

    pub fn plan_for(&self, k_star: f64, r: f64) -> Result<InvestmentPlan> {
        let alpha = self.alpha();
        let w_prev = match self.w_prev {
            Some(w) => w,
            None => alpha.get(self.l.saturating_sub(1)).copied().unwrap_or(0.0),
        };
        InvestmentPlan::new(self.tau, alpha, self.p, self.c0)?
            .with_weighting(self.weighting)
            .with_stop_loss(k_star, r)
            .at_period(self.l, w_prev)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub paths: usize,
    pub seed: Option<u64>,
    pub dt: f64,
    /// Allocation to simulate; `None` uses the solver's answer.
    pub x: Option<Vec<f64>>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { paths: 100_000, seed: None, dt: 1e-3, x: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationTiming {
    #[default]
    Fixed,
    Rolling,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub start: Option<NaiveDate>,
    pub cash_interest: bool,
    pub calibration_timing: CalibrationTiming,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<MarketSpec>,
    pub calibration: Option<CalibrationConfig>,
    pub prices: Option<PathBuf>,
    pub plan: PlanConfig,
    pub simulation: SimulationConfig,
    pub backtest: BacktestConfig,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = &config.prices {
            if p.is_relative() {
                config.prices = Some(base.join(p));
            }
        }
        Ok(config)
    }

    /// Checks the source-of-parameters rule and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        match (&self.model, &self.calibration) {
            (Some(_), Some(_)) => return Err(Error::Config("give either model or calibration, not both".into())),
            (None, None) => return Err(Error::Config("one of model or calibration is required".into())),
            _ => {}
        }
        if self.calibration.is_some() && self.prices.is_none() {
            return Err(Error::Config("calibration needs a prices file".into()));
        }
        if let Some(p) = &self.prices {
            if !p.is_file() {
                return Err(Error::Config(format!("prices file {} does not exist", p.display())));
            }
        }
        if let Some(c) = &self.calibration {
            c.validate()?;
        }
        if self.plan.k_star.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
            return Err(Error::Config("k_star values must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.plan.tau, 6);
        assert_eq!(c.plan.alpha(), vec![1.0; 6]);
        assert_eq!(c.plan.p, 0.05);
        let plan = c.plan.plan_for(0.95, 0.03).unwrap();
        assert_eq!(plan.w_prev, 1.0);
        assert!((plan.floor - crate::backtest::stop_loss_floor(0.95, 6, 0.03)).abs() < 1e-15);
    }

    #[test]
    fn exactly_one_source() {
        let dir = tempfile::tempdir().unwrap();
        let prices = dir.path().join("p.csv");
        std::fs::write(&prices, "date,A\n2020-01-01,1\n").unwrap();
        let model = MarketSpec::without_jumps(0.03, vec![0.05], vec![0.2], vec![vec![1.0]]);

        let mut c = RunConfig::default();
        assert!(c.validate().is_err());
        c.model = Some(model.clone());
        c.validate().unwrap();
        c.calibration = Some(CalibrationConfig::default());
        assert!(c.validate().is_err());
        c.model = None;
        assert!(c.validate().is_err());
        c.prices = Some(prices);
        c.validate().unwrap();
        c.prices = Some(dir.path().join("missing.csv"));
        assert!(c.validate().is_err());
    }

    #[test]
    fn file_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("p.csv"), "date,A\n2020-01-01,1\n").unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(
            &path,
            r#"{"calibration": {}, "prices": "p.csv", "plan": {"k_star": [0.9]},
               "backtest": {"start": "2020-08-01", "calibration_timing": "rolling"}}"#,
        )
        .unwrap();
        let c = RunConfig::load(&path).unwrap();
        c.validate().unwrap();
        assert_eq!(c.prices.as_deref(), Some(dir.path().join("p.csv").as_path()));
        assert_eq!(c.plan.k_star, vec![0.9]);
        assert_eq!(c.backtest.calibration_timing, CalibrationTiming::Rolling);
        assert_eq!(c.calibration.unwrap().jump_threshold_multiplier, 3.0);

        std::fs::write(&path, r#"{"plan": {"tua": 6}}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }
}

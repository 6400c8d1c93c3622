//! Comonotonic lower bound on terminal wealth and its first-order
//! linearization.
//!
//! At the start of period `l` the wealth `w = w_{l-1}` and every future
//! endowment `alpha_i` (`i = l..tau-1`) form tranches indexed by the period
//! `n` at which they are invested. Tranche `n` grows by `exp(V_n + S_n)` where
//! `V_n` is the aggregate diffusion over `(n, tau]` and `S_n` the drift and
//! jumps. Conditioning on `Lambda = sum_k beta_k V_k` yields
//!
//! ```text
//! W^L = sum_n t_n exp(c1_n + c2_n(x) + c3_n sqrt(sigma^2(x)) Lambda / sigma_Lambda)
//! ```
//!
//! with `c3_n = sqrt(tau - n) r_n` and `r_n = Corr(V_n, Lambda)`. Replacing
//! `exp(u)` by `1 + u` gives `W'^L = c4 + c5(x) + c6 sqrt(sigma^2(x)) Lambda / sigma_Lambda`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{portfolio_drift, portfolio_variance, scaled_mgf_at_one, ModelParams};
use crate::optimizer::{ray_scalars, C9Convention};
use crate::stats::normal_tail_factor;

/// Largest exponent passed to `exp` when evaluating the bound.
pub const EXPONENT_CLAMP: f64 = 700.0;

/// Weight given to the current-wealth tranche inside `Lambda`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaWeighting {
    /// `alpha_{l-1}`, as the conditioning variable is usually written.
    #[default]
    Literal,
    /// `w_{l-1}` in place of `alpha_{l-1}`.
    WealthWeighted,
}

/// Horizon, endowments and risk settings, positioned at period `l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvestmentPlan {
    pub tau: usize,
    /// Endowments `alpha_0 .. alpha_{tau-1}`.
    pub alpha: Vec<f64>,
    pub p: f64,
    pub k_star: f64,
    /// Wealth floor `K` for the CLVaR constraint.
    pub floor: f64,
    /// Cap on the portfolio drift `mu(x)`.
    pub c0: f64,
    /// Current period, 1-based.
    pub l: usize,
    /// Wealth at the start of period `l`.
    pub w_prev: f64,
    #[serde(default)]
    pub weighting: LambdaWeighting,
}

impl InvestmentPlan {
    /// Plan positioned at `l = 1` with `w_0 = alpha_0` and no floor.
    pub fn new(tau: usize, alpha: Vec<f64>, p: f64, c0: f64) -> Result<Self> {
        let w_prev = alpha.first().copied().unwrap_or(0.0);
        let plan = InvestmentPlan {
            tau,
            alpha,
            p,
            k_star: 0.0,
            floor: 0.0,
            c0,
            l: 1,
            w_prev,
            weighting: LambdaWeighting::Literal,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    /// Sets `k*` and the floor `K = k* sum_{i=1}^{tau} e^{(tau-i+1) r / tau}`.
    pub fn with_stop_loss(mut self, k_star: f64, r: f64) -> Self {
        self.k_star = k_star;
        self.floor = crate::backtest::stop_loss_floor(k_star, self.tau, r);
        self
    }

    pub fn with_weighting(mut self, weighting: LambdaWeighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn at_period(mut self, l: usize, w_prev: f64) -> Result<Self> {
        self.l = l;
        self.w_prev = w_prev;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau < 1 {
            return Err(Error::invalid("tau", "horizon must be at least one period"));
        }
        if self.alpha.len() != self.tau {
            return Err(Error::invalid(
                "alpha",
                format!("{} endowments for a horizon of {}", self.alpha.len(), self.tau),
            ));
        }
        if let Some(i) = self.alpha.iter().position(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::invalid("alpha", format!("alpha[{i}] must be >= 0")));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidProbability(self.p));
        }
        if !(1..=self.tau).contains(&self.l) {
            return Err(Error::invalid("l", format!("period {} outside 1..={}", self.l, self.tau)));
        }
        if !(self.w_prev >= 0.0 && self.w_prev.is_finite()) {
            return Err(Error::invalid("w_prev", "wealth must be >= 0"));
        }
        if !self.floor.is_finite() && self.floor != f64::NEG_INFINITY {
            return Err(Error::invalid("floor", "must be finite or -inf"));
        }
        if self.c0.is_nan() {
            return Err(Error::invalid("c0", "must not be NaN"));
        }
        Ok(())
    }

    /// Index of the first tranche, `l - 1`.
    pub fn first_tranche(&self) -> usize {
        self.l - 1
    }

    /// Tranche indices `n = l-1 ..= tau-1`.
    pub fn tranches(&self) -> std::ops::RangeInclusive<usize> {
        self.first_tranche()..=self.tau - 1
    }

    /// Amount invested at the start of period `n + 1`.
    pub fn tranche_amount(&self, n: usize) -> f64 {
        if n == self.first_tranche() {
            self.w_prev
        } else {
            self.alpha[n]
        }
    }

    /// Weight of `V_n` inside `Lambda`.
    pub fn conditioning_weight(&self, n: usize) -> f64 {
        match self.weighting {
            LambdaWeighting::WealthWeighted if n == self.first_tranche() => self.w_prev,
            _ => self.alpha[n],
        }
    }

    /// Periods left for tranche `n` to grow.
    pub fn remaining(&self, n: usize) -> usize {
        self.tau - n
    }

    /// Sum of the endowment schedule.
    pub fn total_endowment(&self) -> f64 {
        self.alpha.iter().sum()
    }
}

/// `sum_{k,w} beta_k beta_w min(tau - k, tau - w)`, so that
/// `Var(Lambda) = sigma^2(x)` times this factor.
pub fn lambda_variance_factor(plan: &InvestmentPlan) -> f64 {
    let mut total = 0.0;
    for k in plan.tranches() {
        for w in plan.tranches() {
            total += plan.conditioning_weight(k)
                * plan.conditioning_weight(w)
                * plan.remaining(k).min(plan.remaining(w)) as f64;
        }
    }
    total
}

/// `r_n = Corr(V_n, Lambda)`.
pub fn corr_vn_lambda(n: usize, plan: &InvestmentPlan) -> Result<f64> {
    if !plan.tranches().contains(&n) {
        return Err(Error::invalid(
            "n",
            format!("tranche {n} outside {}..={}", plan.first_tranche(), plan.tau - 1),
        ));
    }
    let factor = lambda_variance_factor(plan);
    if factor <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let cov: f64 = plan
        .tranches()
        .map(|k| plan.conditioning_weight(k) * plan.remaining(n).min(plan.remaining(k)) as f64)
        .sum();
    Ok(cov / (plan.remaining(n) as f64 * factor).sqrt())
}

/// How the jump-moment terms of `c1_n` are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum JumpTerms {
    /// At the allocation `x` being evaluated.
    #[default]
    AtAllocation,
    /// At `x = 0`, where they vanish; makes `c4` independent of `x`.
    Suppressed,
}

/// Every scalar of the lower bound and its linearization at a fixed `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCoefficients {
    /// Index of the first tranche (`l - 1`); vectors below are indexed from it.
    pub first_tranche: usize,
    pub tau: usize,
    /// Tranche amounts `t_n` (`w_{l-1}` then `alpha_l..alpha_{tau-1}`).
    pub tranche: Vec<f64>,
    /// `sigma^2(x)`.
    pub variance: f64,
    pub r_n: Vec<f64>,
    pub sigma_lambda: f64,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub c3: Vec<f64>,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
    pub c9: f64,
}

impl BoundCoefficients {
    /// `sqrt(sigma^2(x))`.
    pub fn volatility(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Exponent of tranche `i` (position in the vectors) at a standardized `Lambda`.
    fn exponent(&self, i: usize, lambda_std: f64) -> f64 {
        self.c1[i] + self.c2[i] + self.c3[i] * self.volatility() * lambda_std
    }
}

pub fn bound_coefficients(
    params: &ModelParams,
    plan: &InvestmentPlan,
    x: &[f64],
) -> Result<BoundCoefficients> {
    bound_coefficients_with(params, plan, x, JumpTerms::AtAllocation, C9Convention::Derived)
}

pub fn bound_coefficients_with(
    params: &ModelParams,
    plan: &InvestmentPlan,
    x: &[f64],
    jumps: JumpTerms,
    c9_convention: C9Convention,
) -> Result<BoundCoefficients> {
    plan.validate()?;
    params.check_len(x)?;
    let variance = portfolio_variance(params, x)?;
    let excess = portfolio_drift(params, x)? - params.r();

    // Per-period jump contribution to log E[e^Y].
    let jump_rate = match jumps {
        JumpTerms::Suppressed => 0.0,
        JumpTerms::AtAllocation => {
            let mut common = 1.0;
            let mut idio = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                common *= scaled_mgf_at_one(xj, params.h(j, 0))?;
                idio += params.lambda_idio()[j] * (scaled_mgf_at_one(xj, params.h(j, 1))? - 1.0);
            }
            params.lambda_common() * (common - 1.0) + idio
        }
    };

    let factor = lambda_variance_factor(plan);
    if factor <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let sigma_lambda = (variance * factor).sqrt();

    let tranches: Vec<usize> = plan.tranches().collect();
    let mut r_n = Vec::with_capacity(tranches.len());
    let mut c1 = Vec::with_capacity(tranches.len());
    let mut c2 = Vec::with_capacity(tranches.len());
    let mut c3 = Vec::with_capacity(tranches.len());
    let mut amount = Vec::with_capacity(tranches.len());
    for &n in &tranches {
        let span = plan.remaining(n) as f64;
        let rn = corr_vn_lambda(n, plan)?;
        r_n.push(rn);
        c1.push(span * params.r() + span * jump_rate);
        c2.push(span * excess - 0.5 * span * rn * rn * variance);
        c3.push(span.sqrt() * rn);
        amount.push(plan.tranche_amount(n));
    }

    let weighted = |v: &[f64]| amount.iter().zip(v).map(|(t, c)| t * c).sum::<f64>();
    let c4 = amount.iter().zip(&c1).map(|(t, c)| t * (1.0 + c)).sum::<f64>();
    let c5 = weighted(&c2);
    let c6 = weighted(&c3);
    let c7 = c6 * normal_tail_factor(plan.p);
    let (c8, c9) = ray_scalars(plan, &r_n, c9_convention);

    Ok(BoundCoefficients {
        first_tranche: plan.first_tranche(),
        tau: plan.tau,
        tranche: amount,
        variance,
        r_n,
        sigma_lambda,
        c1,
        c2,
        c3,
        c4,
        c5,
        c6,
        c7,
        c8,
        c9,
    })
}

/// Value of the comonotonic lower bound at `Lambda / sigma_Lambda = lambda_std`,
/// and whether any exponent had to be clamped to `EXPONENT_CLAMP`.
pub fn lower_bound_value_checked(coeffs: &BoundCoefficients, lambda_std: f64) -> (f64, bool) {
    let mut clamped = false;
    let value = (0..coeffs.tranche.len())
        .map(|i| {
            let e = coeffs.exponent(i, lambda_std);
            let e = if e.abs() > EXPONENT_CLAMP {
                clamped = true;
                e.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP)
            } else {
                e
            };
            coeffs.tranche[i] * e.exp()
        })
        .sum();
    (value, clamped)
}

pub fn lower_bound_value(coeffs: &BoundCoefficients, lambda_std: f64) -> f64 {
    lower_bound_value_checked(coeffs, lambda_std).0
}

/// Individual tranche terms of the lower bound; each is nondecreasing in
/// `lambda_std`, so together they form a comonotonic vector.
pub fn lower_bound_terms(coeffs: &BoundCoefficients, lambda_std: f64) -> Vec<f64> {
    (0..coeffs.tranche.len())
        .map(|i| {
            let e = coeffs.exponent(i, lambda_std).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
            coeffs.tranche[i] * e.exp()
        })
        .collect()
}

/// `E[W^L]` over a standard-normal `lambda_std`.
pub fn lower_bound_mean(coeffs: &BoundCoefficients) -> f64 {
    (0..coeffs.tranche.len())
        .map(|i| {
            let c3v = coeffs.c3[i] * coeffs.volatility();
            coeffs.tranche[i] * (coeffs.c1[i] + coeffs.c2[i] + 0.5 * c3v * c3v).exp()
        })
        .sum()
}

/// `W'^L = c4 + c5 + c6 sqrt(sigma^2(x)) lambda_std`.
pub fn linearized_bound(coeffs: &BoundCoefficients, lambda_std: f64) -> f64 {
    coeffs.c4 + coeffs.c5 + coeffs.c6 * coeffs.volatility() * lambda_std
}

/// `CVaR_{1-p}(-W'^L) = -c4 - c5 + c7 sqrt(sigma^2(x))`.
pub fn linearized_cvar_of_negative(coeffs: &BoundCoefficients) -> f64 {
    -coeffs.c4 - coeffs.c5 + coeffs.c7 * coeffs.volatility()
}

/// `E[e^Y]` for one period under a constant allocation.
pub fn expected_period_growth(params: &ModelParams, x: &[f64]) -> Result<f64> {
    let drift = portfolio_drift(params, x)?;
    let mut common = 1.0;
    let mut idio = 0.0;
    for (j, &xj) in x.iter().enumerate() {
        common *= scaled_mgf_at_one(xj, params.h(j, 0))?;
        idio += params.lambda_idio()[j] * xj * params.h(j, 1);
    }
    Ok((drift + params.lambda_common() * (common - 1.0) + idio).exp())
}

/// Closed-form `E[W_tau]` for a constant allocation from period `l` on.
pub fn expected_terminal_wealth(params: &ModelParams, plan: &InvestmentPlan, x: &[f64]) -> Result<f64> {
    plan.validate()?;
    let g = expected_period_growth(params, x)?;
    Ok(plan
        .tranches()
        .map(|n| plan.tranche_amount(n) * g.powi(plan.remaining(n) as i32))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JumpLaw, MarketSpec};
    use crate::risk::gaussian_cvar_of_negative;

    fn market(lambda: f64, lambda_j: f64) -> ModelParams {
        let law = JumpLaw::Normal { mean: -0.05, variance: 0.01 };
        let spec = MarketSpec::without_jumps(
            0.03,
            vec![0.05, 0.03],
            vec![0.2, 0.3],
            vec![vec![1.0, 1.0 / 6.0], vec![1.0 / 6.0, 1.0]],
        )
        .with_jumps(lambda, vec![law, law], vec![lambda_j, lambda_j], vec![law, law]);
        ModelParams::new(spec).unwrap()
    }

    fn unit_plan() -> InvestmentPlan {
        InvestmentPlan::new(6, vec![1.0; 6], 0.05, 1.0).unwrap()
    }

    // Direct double-sum oracle for r_n, written from the covariance structure
    // of overlapping Brownian increments.
    fn r_n_oracle(n: usize, weights: &[(usize, f64)], tau: usize) -> f64 {
        let cov: f64 = weights.iter().map(|&(k, a)| a * (tau - n).min(tau - k) as f64).sum();
        let mut var = 0.0;
        for &(k, a) in weights {
            for &(w, b) in weights {
                var += a * b * (tau - k).min(tau - w) as f64;
            }
        }
        cov / ((tau - n) as f64 * var).sqrt()
    }

    #[test]
    fn correlation_examples() {
        let single = InvestmentPlan::new(3, vec![0.0, 0.0, 2.0], 0.05, 1.0)
            .unwrap()
            .at_period(3, 0.0)
            .unwrap();
        assert!((corr_vn_lambda(2, &single).unwrap() - 1.0).abs() < 1e-15);

        let two = InvestmentPlan::new(2, vec![1.0, 1.0], 0.05, 1.0).unwrap();
        let r0 = corr_vn_lambda(0, &two).unwrap();
        assert!((r0 - 3.0 / 10f64.sqrt()).abs() < 1e-15);
        assert!((r0 - 0.94868).abs() < 1e-5);

        let plan = InvestmentPlan::new(6, vec![1.0, 0.5, 2.0, 0.0, 1.0, 3.0], 0.05, 1.0).unwrap();
        let weights: Vec<(usize, f64)> = (0..6).map(|k| (k, plan.alpha[k])).collect();
        for n in 0..6 {
            assert!((corr_vn_lambda(n, &plan).unwrap() - r_n_oracle(n, &weights, 6)).abs() < 1e-14);
        }
    }

    #[test]
    fn correlation_errors() {
        let zero = InvestmentPlan::new(2, vec![0.0, 0.0], 0.05, 1.0).unwrap();
        assert!(matches!(corr_vn_lambda(0, &zero), Err(Error::ZeroWeights)));
        let plan = unit_plan().at_period(3, 2.0).unwrap();
        assert!(corr_vn_lambda(1, &plan).is_err());
        assert!(corr_vn_lambda(6, &plan).is_err());
    }

    #[test]
    fn weighting_policy_changes_first_weight() {
        let plan = unit_plan().at_period(2, 4.0).unwrap();
        let wealth = plan.clone().with_weighting(LambdaWeighting::WealthWeighted);
        let lit: Vec<(usize, f64)> = (1..6).map(|k| (k, 1.0)).collect();
        let mut ww = lit.clone();
        ww[0].1 = 4.0;
        for n in 1..6 {
            assert!((corr_vn_lambda(n, &plan).unwrap() - r_n_oracle(n, &lit, 6)).abs() < 1e-14);
            assert!((corr_vn_lambda(n, &wealth).unwrap() - r_n_oracle(n, &ww, 6)).abs() < 1e-14);
        }
    }

    #[test]
    fn risk_free_degenerate_case() {
        let params = market(0.0, 0.0);
        let plan = unit_plan().at_period(2, 3.0).unwrap();
        let c = bound_coefficients(&params, &plan, &[0.0, 0.0]).unwrap();
        for (i, n) in plan.tranches().enumerate() {
            assert!((c.c1[i] - (6 - n) as f64 * 0.03).abs() < 1e-15);
            assert_eq!(c.c2[i], 0.0);
        }
        assert_eq!(c.c5, 0.0);
        let expected = 3.0 * (1.0 + 5.0 * 0.03)
            + (2..6).map(|i| 1.0 + (6 - i) as f64 * 0.03).sum::<f64>();
        assert!((c.c4 - expected).abs() < 1e-14);
    }

    #[test]
    fn c4_on_the_endowment_schedule() {
        let params = market(0.0, 0.0);
        let c = bound_coefficients(&params, &unit_plan(), &[0.0, 0.0]).unwrap();
        // Six tranches: w_0 = alpha_0 = 1 plus alpha_1..alpha_5, spans 6, 5, 4, 3, 2, 1.
        let hand = 6.0 + 0.03 * (6.0 + 5.0 + 4.0 + 3.0 + 2.0 + 1.0);
        assert!((c.c4 - hand).abs() < 1e-14);
    }

    #[test]
    fn structural_identities() {
        let params = market(0.3, 0.2);
        let plan = unit_plan().with_stop_loss(0.9, 0.03).at_period(2, 2.5).unwrap();
        let x = [0.4, 0.2];
        let c = bound_coefficients(&params, &plan, &x).unwrap();
        for (i, n) in plan.tranches().enumerate() {
            assert_eq!(c.c3[i], ((6 - n) as f64).sqrt() * c.r_n[i]);
            assert!(c.r_n[i] > 0.0 && c.r_n[i] <= 1.0 + 1e-15);
        }
        assert!(c.c6 > 0.0 && c.c8 > 0.0 && c.c9 > 0.0);
        assert!((c.c7 - c.c6 * 2.0627).abs() < 1e-4 * c.c6);
        let sigma2 = portfolio_variance(&params, &x).unwrap();
        assert!((c.sigma_lambda.powi(2) - sigma2 * lambda_variance_factor(&plan)).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_examples() {
        let params = market(0.3, 0.2);
        let plan = unit_plan();
        let zero = bound_coefficients(&params, &plan, &[0.0, 0.0]).unwrap();
        assert_eq!(lower_bound_value(&zero, -3.0), lower_bound_value(&zero, 2.0));
        assert_eq!(linearized_bound(&zero, 1.7), zero.c4);

        let c = bound_coefficients(&params, &plan, &[0.5, 0.3]).unwrap();
        let mid: f64 = (0..c.tranche.len())
            .map(|i| c.tranche[i] * (c.c1[i] + c.c2[i]).exp())
            .sum();
        assert!((lower_bound_value(&c, 0.0) - mid).abs() < 1e-13);
        assert!(lower_bound_value(&c, 0.1) > lower_bound_value(&c, 0.0));

        let (_, clamped) = lower_bound_value_checked(&c, 1e6);
        assert!(clamped);
        assert!(lower_bound_value(&c, 1e6).is_finite());
    }

    #[test]
    fn lower_bound_mean_equals_closed_form_expectation() {
        let params = market(0.3, 0.2);
        for (l, w) in [(1, 1.0), (3, 2.7), (6, 5.0)] {
            let plan = unit_plan().at_period(l, w).unwrap();
            for x in [[0.5, 0.3], [1.5, -0.4], [0.0, 0.0]] {
                let c = bound_coefficients(&params, &plan, &x).unwrap();
                let exact = expected_terminal_wealth(&params, &plan, &x).unwrap();
                assert!((lower_bound_mean(&c) - exact).abs() < 1e-10 * exact);
            }
        }
    }

    #[test]
    fn linearized_cvar_matches_gaussian_formula() {
        let params = market(0.3, 0.2);
        let plan = unit_plan();
        let c = bound_coefficients(&params, &plan, &[0.5, 0.3]).unwrap();
        let sd = c.c6 * c.volatility();
        let direct = gaussian_cvar_of_negative(c.c4 + c.c5, sd, plan.p);
        assert!((linearized_cvar_of_negative(&c) - direct).abs() < 1e-12);
    }

    #[test]
    fn taylor_remainder_is_second_order() {
        // Scale drifts, rate, volatilities and intensities by eps; every exponent
        // is then O(eps), so the gap between exp-form and linear form is O(eps^2).
        let base_x = [0.5, 0.3];
        let mut gaps = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3] {
            let law = JumpLaw::Normal { mean: -0.05 * eps, variance: 0.01 * eps * eps };
            let spec = MarketSpec::without_jumps(
                0.03 * eps,
                vec![0.05 * eps, 0.03 * eps],
                vec![0.2 * eps, 0.3 * eps],
                vec![vec![1.0, 1.0 / 6.0], vec![1.0 / 6.0, 1.0]],
            )
            .with_jumps(0.3 * eps, vec![law, law], vec![0.2 * eps, 0.2 * eps], vec![law, law]);
            let params = ModelParams::new(spec).unwrap();
            let c = bound_coefficients(&params, &unit_plan(), &base_x).unwrap();
            let gap = (0..5)
                .map(|k| {
                    let z = -2.0 + k as f64;
                    (lower_bound_value(&c, z) - linearized_bound(&c, z)).abs()
                })
                .fold(0.0, f64::max);
            gaps.push(gap);
        }
        for w in gaps.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 80.0 && ratio < 120.0, "gap ratio {ratio} ({gaps:?})");
        }
    }
}

//! Closed-form allocation along the ray `x = q * Sigma^{-1} A`.
//!
//! On the ray, with `a = A' Sigma^{-1} A`, the linearized problem becomes a
//! scalar one in `q`:
//!
//! ```text
//! maximize   c4 + a c8 q - a c9 q^2
//! subject to B1 q^2 + B2 q + B3 >= 0      (CLVaR floor, B1 = -c9 a < 0)
//!            r + a q <= c0                (drift cap)
//! ```
//!
//! with `B2 = a c8 - c7 sqrt(a)` and `B3 = c4 - K`. The answer is
//! `q = min(q1, q2, q3)`: the upper root of the floor quadratic, the
//! unconstrained maximizer `c8 / (2 c9)`, and the drift-cap scale.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bound::{bound_coefficients_with, BoundCoefficients, InvestmentPlan, JumpTerms};
use crate::error::{Error, Result};
use crate::model::{portfolio_drift, portfolio_variance, Allocation, ModelParams};

/// Form of the quadratic ray coefficient `c9`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C9Convention {
    /// `1/2 sum_n t_n (tau - n) r_n^2`, the exact quadratic coefficient of `c5` on the ray.
    #[default]
    Derived,
    /// `1/2 w (tau - l + 1) r_{l-1}^2 + 1/2 sum_i alpha_i r_i^2` (no span factor on future tranches).
    NoFutureSpan,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub c9: C9Convention,
}

/// Which candidate produced the chosen scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    RiskFloor,
    RayStationarity,
    DriftCap,
    /// `A = 0`: no excess drift to earn, the allocation is zero.
    NoExcessDrift,
    /// All candidates negative but `q = 0` feasible.
    ZeroFallback,
}

impl Binding {
    pub fn as_str(&self) -> &'static str {
        match self {
            Binding::RiskFloor => "risk_floor",
            Binding::RayStationarity => "ray_stationarity",
            Binding::DriftCap => "drift_cap",
            Binding::NoExcessDrift => "no_excess_drift",
            Binding::ZeroFallback => "zero_fallback",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub x_star: Vec<f64>,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q: f64,
    pub allocation: Allocation,
    pub binding: Binding,
    /// `c4 + c5(x)`.
    pub objective: f64,
    /// `-K - (-c4 - c5 + c7 sqrt(sigma^2(x)))`; nonnegative when the floor holds.
    pub risk_floor_slack: f64,
    /// `c0 - (r + A'x)`.
    pub drift_cap_slack: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    /// `A' Sigma^{-1} A`.
    pub a_sigma_a: f64,
    /// Lower root of the floor quadratic; the feasible ray segment is `[q_lower, q1]`.
    pub q_lower: f64,
    pub c4: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
    pub c9: f64,
    pub warning: Option<String>,
}

/// `x* = Sigma^{-1} A`.
pub fn base_direction(params: &ModelParams) -> Result<Vec<f64>> {
    let a = params.a();
    let x = params.cov_cholesky().solve(a);
    let residual = (params.cov() * &x - a).amax();
    if residual > 1e-10 * a.amax().max(f64::MIN_POSITIVE) && a.amax() > 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(x.iter().copied().collect())
}

/// `(c8, c9)`: linear and quadratic coefficients of the ray objective, per unit `a`.
pub fn ray_scalars(plan: &InvestmentPlan, r_vec: &[f64], convention: C9Convention) -> (f64, f64) {
    let mut c8 = 0.0;
    let mut c9 = 0.0;
    for (i, n) in plan.tranches().enumerate() {
        let t = plan.tranche_amount(n);
        let span = plan.remaining(n) as f64;
        c8 += t * span;
        let weight = match convention {
            C9Convention::Derived => span,
            C9Convention::NoFutureSpan if n == plan.first_tranche() => span,
            C9Convention::NoFutureSpan => 1.0,
        };
        c9 += 0.5 * t * weight * r_vec[i] * r_vec[i];
    }
    (c8, c9)
}

/// Linearized problem evaluated at `x` with `c4` taken at zero jump exposure.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedPoint {
    pub objective: f64,
    pub risk_floor_slack: f64,
    pub drift_cap_slack: f64,
}

impl LinearizedPoint {
    pub fn is_feasible(&self) -> bool {
        self.risk_floor_slack >= 0.0 && self.drift_cap_slack >= 0.0
    }
}

pub fn evaluate_linearized(params: &ModelParams, plan: &InvestmentPlan, x: &[f64]) -> Result<LinearizedPoint> {
    let c = bound_coefficients_with(params, plan, x, JumpTerms::Suppressed, C9Convention::Derived)?;
    point_from(&c, params, plan, x)
}

fn point_from(
    c: &BoundCoefficients,
    params: &ModelParams,
    plan: &InvestmentPlan,
    x: &[f64],
) -> Result<LinearizedPoint> {
    let risk = -c.c4 - c.c5 + c.c7 * c.volatility();
    Ok(LinearizedPoint {
        objective: c.c4 + c.c5,
        risk_floor_slack: -plan.floor - risk,
        drift_cap_slack: plan.c0 - portfolio_drift(params, x)?,
    })
}

pub fn solve(params: &ModelParams, plan: &InvestmentPlan) -> Result<SolverReport> {
    solve_with(params, plan, SolverOptions::default())
}

pub fn solve_with(params: &ModelParams, plan: &InvestmentPlan, options: SolverOptions) -> Result<SolverReport> {
    plan.validate()?;
    if plan.p >= 0.5 {
        return Err(Error::RiskLevelTooHigh(plan.p));
    }
    if !(plan.c0 >= params.r()) {
        return Err(Error::invalid("c0", format!("drift cap {} is below r = {}", plan.c0, params.r())));
    }
    let m = params.m();
    let zero = vec![0.0; m];
    let coeffs = bound_coefficients_with(params, plan, &zero, JumpTerms::Suppressed, options.c9)?;
    let (c4, c6, c7, c8, c9) = (coeffs.c4, coeffs.c6, coeffs.c7, coeffs.c8, coeffs.c9);
    if !(c8 > 0.0 && c9 > 0.0) {
        return Err(Error::NothingInvested);
    }

    let x_star = base_direction(params)?;
    let a_sigma_a: f64 = params.a().dot(&DVector::from_column_slice(&x_star));
    let b3 = c4 - plan.floor;

    if a_sigma_a <= 0.0 {
        if b3 < 0.0 {
            return Err(Error::NoFeasibleScale { q: 0.0, lower: f64::NAN, upper: f64::NAN });
        }
        return finish(
            params,
            plan,
            Partial {
                x_star,
                q1: f64::INFINITY,
                q2: 0.0,
                q3: f64::INFINITY,
                q: 0.0,
                q_lower: f64::NEG_INFINITY,
                binding: Binding::NoExcessDrift,
                b: (0.0, 0.0, b3),
                a_sigma_a,
                c: (c4, c6, c7, c8, c9),
                warning: Some("no excess drift; holding cash".into()),
            },
        );
    }

    let b1 = -c9 * a_sigma_a;
    let b2 = c8 * a_sigma_a - c7 * a_sigma_a.sqrt();
    let (q_lower, q1) = if plan.floor == f64::NEG_INFINITY {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        let discriminant = b2 * b2 - 4.0 * b1 * b3;
        if discriminant < 0.0 {
            return Err(Error::RiskFloorInfeasible { floor: plan.floor, discriminant });
        }
        // Cancellation-free roots of b1 q^2 + b2 q + b3.
        let s = -0.5 * (b2 + b2.signum() * discriminant.sqrt());
        let (root_a, root_b) = if s == 0.0 { (0.0, 0.0) } else { (s / b1, b3 / s) };
        (root_a.min(root_b), root_a.max(root_b))
    };
    let q2 = c8 / (2.0 * c9);
    let q3 = (plan.c0 - params.r()) / a_sigma_a;

    let mut q = q1;
    let mut binding = Binding::RiskFloor;
    for (candidate, label) in [(q2, Binding::RayStationarity), (q3, Binding::DriftCap)] {
        if candidate < q {
            q = candidate;
            binding = label;
        }
    }

    let mut warning = None;
    if q < 0.0 {
        if b3 >= 0.0 {
            warning = Some(format!("all candidate scales negative (min {q}); holding cash"));
            q = 0.0;
            binding = Binding::ZeroFallback;
        } else {
            return Err(Error::NoFeasibleScale { q, lower: q_lower, upper: q1 });
        }
    }
    if q < q_lower {
        return Err(Error::NoFeasibleScale { q, lower: q_lower, upper: q1 });
    }

    finish(
        params,
        plan,
        Partial {
            x_star,
            q1,
            q2,
            q3,
            q,
            q_lower,
            binding,
            b: (b1, b2, b3),
            a_sigma_a,
            c: (c4, c6, c7, c8, c9),
            warning,
        },
    )
}

struct Partial {
    x_star: Vec<f64>,
    q1: f64,
    q2: f64,
    q3: f64,
    q: f64,
    q_lower: f64,
    binding: Binding,
    b: (f64, f64, f64),
    a_sigma_a: f64,
    c: (f64, f64, f64, f64, f64),
    warning: Option<String>,
}

fn finish(params: &ModelParams, plan: &InvestmentPlan, s: Partial) -> Result<SolverReport> {
    let allocation = Allocation::on_ray(s.q, &s.x_star);
    let point = evaluate_linearized(params, plan, &allocation.x)?;
    let (c4, c6, c7, c8, c9) = s.c;
    Ok(SolverReport {
        x_star: s.x_star,
        q1: s.q1,
        q2: s.q2,
        q3: s.q3,
        q: s.q,
        allocation,
        binding: s.binding,
        objective: point.objective,
        risk_floor_slack: point.risk_floor_slack,
        drift_cap_slack: point.drift_cap_slack,
        b1: s.b.0,
        b2: s.b.1,
        b3: s.b.2,
        a_sigma_a: s.a_sigma_a,
        q_lower: s.q_lower,
        c4,
        c6,
        c7,
        c8,
        c9,
        warning: s.warning,
    })
}

/// Exhaustive search of the linearized problem over a box; for verification.
///
/// `bounds[j]` is the closed range for `x_j`, sampled at `steps` evenly spaced
/// points. Returns the best feasible point and its objective.
pub fn grid_oracle(
    params: &ModelParams,
    plan: &InvestmentPlan,
    bounds: &[(f64, f64)],
    steps: usize,
) -> Result<(Vec<f64>, f64)> {
    let m = params.m();
    if m > 3 {
        return Err(Error::invalid("m", "grid search supports at most 3 assets"));
    }
    if bounds.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: bounds.len() });
    }
    if steps < 2 {
        return Err(Error::invalid("steps", "need at least 2 points per axis"));
    }
    if plan.p >= 0.5 {
        return Err(Error::RiskLevelTooHigh(plan.p));
    }

    // Everything except sigma^2(x) and A'x is fixed; precompute once.
    let zero = vec![0.0; m];
    let base = bound_coefficients_with(params, plan, &zero, JumpTerms::Suppressed, C9Convention::Derived)?;
    let span_sum: f64 = base.tranche.iter().zip(plan.tranches()).map(|(t, n)| t * plan.remaining(n) as f64).sum();
    let quad_sum = base.c9; // derived convention: 1/2 sum t_n (tau - n) r_n^2

    let axis = |j: usize, k: usize| {
        let (lo, hi) = bounds[j];
        lo + (hi - lo) * k as f64 / (steps - 1) as f64
    };
    let total = steps.pow(m as u32);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut x = vec![0.0; m];
    for idx in 0..total {
        let mut rest = idx;
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = axis(j, rest % steps);
            rest /= steps;
        }
        let excess = portfolio_drift(params, &x)? - params.r();
        let variance = portfolio_variance(params, &x)?;
        let c5 = span_sum * excess - quad_sum * variance;
        let objective = base.c4 + c5;
        let risk = -base.c4 - c5 + base.c7 * variance.sqrt();
        let feasible = -plan.floor - risk >= 0.0 && plan.c0 - (params.r() + excess) >= 0.0;
        if feasible && best.as_ref().is_none_or(|(_, b)| objective > *b) {
            best = Some((x.clone(), objective));
        }
    }
    best.ok_or(Error::NoFeasibleGridPoint)
}

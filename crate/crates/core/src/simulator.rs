//! Monte Carlo sampling of period log-returns and terminal wealth under a
//! constant allocation, an Euler scheme for the wealth SDE, and a daily price
//! panel generator.
//!
//! Path `i` of a run seeded with `seed` draws from ChaCha8 stream `i` of that
//! seed, and paths are assembled in index order, so results do not depend on
//! the number of worker threads.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{lambda_variance_factor, InvestmentPlan};
use crate::error::{Error, Result};
use crate::model::{jump_size_transform, portfolio_drift, portfolio_variance, JumpLaw, ModelParams};

/// Which jump process produced an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpSource {
    Common,
    Idiosyncratic(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub source: JumpSource,
    /// Arrival time within the period, in `[0, 1)`.
    pub time: f64,
    /// Raw log-magnitudes `Z`, one per asset for a common event.
    pub z: Vec<f64>,
    /// Summed transformed magnitude `Z*`; `-inf` on ruin.
    pub transformed: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PeriodJumps {
    pub common_count: u64,
    pub idio_counts: Vec<u64>,
    pub events: Vec<JumpEvent>,
    pub ruined: bool,
}

impl PeriodJumps {
    /// True when no two events share an arrival time.
    pub fn times_distinct(&self) -> bool {
        let mut t: Vec<f64> = self.events.iter().map(|e| e.time).collect();
        t.sort_by(f64::total_cmp);
        t.windows(2).all(|w| w[0] < w[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodDraw {
    /// `Y_t(x)`; `-inf` when a jump ruined the position.
    pub y: f64,
    /// Aggregate Brownian increment, `Normal(0, sigma^2(x))`.
    pub diffusion: f64,
    pub jumps: PeriodJumps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    /// `Y_t` for `t = l..=tau`.
    pub y: Vec<f64>,
    pub terminal_wealth: f64,
    /// `Lambda = sum_k beta_k V_k`.
    pub lambda_real: f64,
    /// `Lambda / sigma_Lambda` (zero when `sigma_Lambda = 0`).
    pub lambda_std: f64,
    /// Centered diffusion part of each tranche's log-growth, tranche order.
    pub v: Vec<f64>,
    /// Drift and jump part; `v[i] + s[i]` is the tranche's log-growth.
    pub s: Vec<f64>,
    pub jump_log: Vec<PeriodJumps>,
    pub ruined: bool,
}

/// Per-allocation constants for sampling `Y_t`.
#[derive(Clone, Debug)]
pub struct PeriodSampler {
    x: Vec<f64>,
    drift: f64,
    sd: f64,
    lambda_common: f64,
    lambda_idio: Vec<f64>,
    common_law: Vec<JumpLaw>,
    idio_law: Vec<JumpLaw>,
}

impl PeriodSampler {
    pub fn new(params: &ModelParams, x: &[f64]) -> Result<Self> {
        let variance = portfolio_variance(params, x)?;
        Ok(PeriodSampler {
            x: x.to_vec(),
            drift: portfolio_drift(params, x)? - 0.5 * variance,
            sd: variance.sqrt(),
            lambda_common: params.lambda_common(),
            lambda_idio: params.lambda_idio().to_vec(),
            common_law: params.common_jump_law().to_vec(),
            idio_law: params.idio_jump_law().to_vec(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PeriodDraw {
        let z: f64 = rng.sample(StandardNormal);
        let diffusion = self.sd * z;
        let mut jumps = PeriodJumps {
            common_count: poisson(self.lambda_common, rng),
            idio_counts: self.lambda_idio.iter().map(|&l| poisson(l, rng)).collect(),
            ..PeriodJumps::default()
        };

        let mut jump_sum = 0.0;
        for _ in 0..jumps.common_count {
            let z: Vec<f64> = self.common_law.iter().map(|law| law.sample(rng)).collect();
            let mut transformed = 0.0;
            for (j, &zj) in z.iter().enumerate() {
                transformed += transform_or_ruin(zj, self.x[j]);
            }
            jumps.events.push(JumpEvent { source: JumpSource::Common, time: rng.random(), z, transformed });
            jump_sum += transformed;
        }
        for j in 0..self.x.len() {
            for _ in 0..jumps.idio_counts[j] {
                let zj = self.idio_law[j].sample(rng);
                let transformed = transform_or_ruin(zj, self.x[j]);
                jumps.events.push(JumpEvent {
                    source: JumpSource::Idiosyncratic(j),
                    time: rng.random(),
                    z: vec![zj],
                    transformed,
                });
                jump_sum += transformed;
            }
        }
        jumps.ruined = jump_sum == f64::NEG_INFINITY;
        let y = if jumps.ruined { f64::NEG_INFINITY } else { self.drift + diffusion + jump_sum };
        PeriodDraw { y, diffusion, jumps }
    }
}

fn transform_or_ruin(z: f64, x_j: f64) -> f64 {
    jump_size_transform(z, x_j).unwrap_or(f64::NEG_INFINITY)
}

fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let d = Poisson::new(rate).expect("positive finite rate");
    d.sample(rng) as u64
}

/// Generator for path `index` of a run seeded with `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One draw of `Y_t(x)` with its diffusion part and jump record.
pub fn sample_period_return<R: Rng + ?Sized>(params: &ModelParams, x: &[f64], rng: &mut R) -> Result<PeriodDraw> {
    Ok(PeriodSampler::new(params, x)?.sample(rng))
}

/// Terminal wealth under the constant allocation `x` from period `l` on.
pub fn sample_terminal_wealth(
    params: &ModelParams,
    plan: &InvestmentPlan,
    x: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<PathSample>> {
    plan.validate()?;
    let sampler = PeriodSampler::new(params, x)?;
    let tranches: Vec<usize> = plan.tranches().collect();
    let amounts: Vec<f64> = tranches.iter().map(|&n| plan.tranche_amount(n)).collect();
    let betas: Vec<f64> = tranches.iter().map(|&n| plan.conditioning_weight(n)).collect();
    let sigma_lambda = (sampler.sd * sampler.sd * lambda_variance_factor(plan)).sqrt();

    let paths = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let draws: Vec<PeriodDraw> = tranches.iter().map(|_| sampler.sample(&mut rng)).collect();
            assemble(draws, &amounts, &betas, sigma_lambda)
        })
        .collect();
    Ok(paths)
}

// Tranche `i` (the i-th of `l-1..tau-1`) is exposed to periods `i..` of `draws`.
fn assemble(draws: Vec<PeriodDraw>, amounts: &[f64], betas: &[f64], sigma_lambda: f64) -> PathSample {
    let k = draws.len();
    let mut growth = vec![0.0; k];
    let mut v = vec![0.0; k];
    let (mut g_acc, mut v_acc) = (0.0, 0.0);
    for i in (0..k).rev() {
        g_acc += draws[i].y;
        v_acc += draws[i].diffusion;
        growth[i] = g_acc;
        v[i] = v_acc;
    }
    let s: Vec<f64> = growth.iter().zip(&v).map(|(g, v)| g - v).collect();
    let terminal_wealth = amounts.iter().zip(&growth).map(|(t, g)| t * g.exp()).sum();
    let lambda_real: f64 = betas.iter().zip(&v).map(|(b, v)| b * v).sum();
    let lambda_std = if sigma_lambda > 0.0 { lambda_real / sigma_lambda } else { 0.0 };
    let ruined = draws.iter().any(|d| d.jumps.ruined);
    let (y, jump_log) = draws.into_iter().map(|d| (d.y, d.jumps)).unzip();
    PathSample { y, terminal_wealth, lambda_real, lambda_std, v, s, jump_log, ruined }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerOutcome {
    /// `P(horizon) / P(0)`; zero once absorbed.
    pub growth: f64,
    pub absorbed: bool,
}

struct TimedJump {
    time: f64,
    factor: f64,
}

/// Multiplicative Euler-Maruyama scheme for the wealth SDE over `horizon`
/// periods with step `dt`.
///
/// Jump arrivals are drawn up front from exponential inter-arrival times and
/// applied at the end of the step containing them. A common event multiplies
/// wealth by `1 + sum_j x_j (e^{Z_j} - 1)`.
pub fn euler_path<R: Rng + ?Sized>(
    params: &ModelParams,
    x: &[f64],
    dt: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<EulerOutcome> {
    params.check_len(x)?;
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::invalid("dt", format!("step {dt} outside (0, 0.01]")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "must be positive"));
    }
    let drift = portfolio_drift(params, x)?;
    // x' L xi has variance x' Sigma x for xi standard normal in R^m.
    let loading: DVector<f64> = params.cov_cholesky().l().transpose() * DVector::from_column_slice(x);
    let steps = (horizon / dt).round().max(1.0) as usize;
    let h = horizon / steps as f64;
    let sqrt_h = h.sqrt();

    let mut jumps = Vec::new();
    for t in arrivals(params.lambda_common(), horizon, rng) {
        let bump: f64 = params
            .common_jump_law()
            .iter()
            .zip(x)
            .map(|(law, xj)| xj * law.sample(rng).exp_m1())
            .sum();
        jumps.push(TimedJump { time: t, factor: 1.0 + bump });
    }
    for (j, &xj) in x.iter().enumerate() {
        for t in arrivals(params.lambda_idio()[j], horizon, rng) {
            let z = params.idio_jump_law()[j].sample(rng);
            jumps.push(TimedJump { time: t, factor: 1.0 + xj * z.exp_m1() });
        }
    }
    jumps.sort_by(|a, b| a.time.total_cmp(&b.time));

    let mut wealth = 1.0;
    let mut next = 0;
    for k in 0..steps {
        let dw: f64 = loading.iter().map(|c| c * rng.sample::<f64, _>(StandardNormal)).sum();
        wealth *= 1.0 + drift * h + dw * sqrt_h;
        let end = if k + 1 == steps { f64::INFINITY } else { (k + 1) as f64 * h };
        while next < jumps.len() && jumps[next].time < end {
            wealth *= jumps[next].factor;
            next += 1;
        }
        if wealth <= 0.0 {
            return Ok(EulerOutcome { growth: 0.0, absorbed: true });
        }
    }
    Ok(EulerOutcome { growth: wealth, absorbed: false })
}

fn arrivals<R: Rng + ?Sized>(rate: f64, horizon: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = gap.sample(rng);
    while t < horizon {
        out.push(t);
        t += gap.sample(rng);
    }
    out
}

/// `n_paths` Euler growth factors, one ChaCha8 stream per path.
pub fn euler_growth_samples(
    params: &ModelParams,
    x: &[f64],
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<EulerOutcome>> {
    (0..n_paths)
        .into_par_iter()
        .map(|i| euler_path(params, x, dt, horizon, &mut path_rng(seed, i as u64)))
        .collect()
}

/// Daily closing prices of the `m` risky assets, `days_per_period` trading
/// days to a model period, starting from `start`.
///
/// Each day draws correlated diffusion increments and the day's common and
/// idiosyncratic jumps; a common event moves every asset by its own draw from
/// its common-jump law.
pub fn simulate_prices<R: Rng + ?Sized>(
    params: &ModelParams,
    start: &[f64],
    days_per_period: usize,
    n_days: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    params.check_len(start)?;
    if days_per_period == 0 {
        return Err(Error::invalid("days_per_period", "must be positive"));
    }
    if let Some(j) = start.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::invalid("start", format!("price {j} must be positive")));
    }
    let m = params.m();
    let dt = 1.0 / days_per_period as f64;
    let log_drift: Vec<f64> = (0..m)
        .map(|j| (params.r() + params.a()[j] - 0.5 * params.sigma()[j].powi(2)) * dt)
        .collect();
    let chol = params.cov_cholesky().l();

    let mut prices = Vec::with_capacity(n_days + 1);
    let mut log_p: Vec<f64> = start.iter().map(|p| p.ln()).collect();
    prices.push(start.to_vec());
    for _ in 0..n_days {
        let xi = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let shock = &chol * xi;
        for j in 0..m {
            log_p[j] += log_drift[j] + shock[j] * dt.sqrt();
        }
        for _ in 0..poisson(params.lambda_common() * dt, rng) {
            for (j, law) in params.common_jump_law().iter().enumerate() {
                log_p[j] += law.sample(rng);
            }
        }
        for j in 0..m {
            for _ in 0..poisson(params.lambda_idio()[j] * dt, rng) {
                log_p[j] += params.idio_jump_law()[j].sample(rng);
            }
        }
        prices.push(log_p.iter().map(|l| l.exp()).collect());
    }
    Ok(prices)
}

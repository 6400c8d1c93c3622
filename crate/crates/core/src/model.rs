//! Market model: one risk-free asset plus `m` risky assets following a
//! multivariate Merton jump-diffusion with a common jump process (intensity
//! `lambda_common`) and one idiosyncratic jump process per asset.
//!
//! Risky price dynamics for asset `j`:
//!
//! ```text
//! dP_j / P_j- = (r + mu_j - lambda h_{j,0} - lambda_j h_{j,1}) dt + sigma_j dB_j
//!               + (e^{Z_{j,0}} - 1) dN + (e^{Z_{j,1}} - 1) dN_j
//! ```
//!
//! with `h_{j,l} = E[e^{Z_{j,l}}] - 1`. The compensated excess drift is
//! `A_j = mu_j - lambda h_{j,0} - lambda_j h_{j,1}`, so a portfolio holding
//! fractions `x` drifts at `r + A'x`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Distribution of a jump log-magnitude `Z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum JumpLaw {
    Normal { mean: f64, variance: f64 },
    PointMass { value: f64 },
}

impl JumpLaw {
    /// Law of a jump that never moves the price.
    pub const ZERO: JumpLaw = JumpLaw::PointMass { value: 0.0 };

    pub fn h_moment(&self) -> f64 {
        h_moment(self)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            JumpLaw::Normal { mean, .. } => mean,
            JumpLaw::PointMass { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            JumpLaw::Normal { variance, .. } => variance,
            JumpLaw::PointMass { .. } => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpLaw::Normal { mean, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + variance.sqrt() * z
            }
            JumpLaw::PointMass { value } => value,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        match *self {
            JumpLaw::Normal { mean, variance } => {
                if !mean.is_finite() || !variance.is_finite() || variance < 0.0 {
                    return Err(Error::invalid(
                        name,
                        format!("normal law needs finite mean and variance >= 0, got ({mean}, {variance})"),
                    ));
                }
            }
            JumpLaw::PointMass { value } => {
                if !value.is_finite() {
                    return Err(Error::invalid(name, "point mass must be finite"));
                }
            }
        }
        Ok(())
    }
}

/// `h = E[e^Z] - 1` for a jump log-magnitude law.
pub fn h_moment(law: &JumpLaw) -> f64 {
    match *law {
        JumpLaw::Normal { mean, variance } => (mean + 0.5 * variance).exp_m1(),
        JumpLaw::PointMass { value } => value.exp_m1(),
    }
}

/// Log-size `Z*` of the jump seen by a position of weight `x_j` when the asset
/// jumps by log-size `z`: `e^{Z*} - 1 = x_j (e^z - 1)`.
///
/// Fails with [`Error::Ruin`] when the jump takes the position's value to zero
/// or below.
pub fn jump_size_transform(z: f64, x_j: f64) -> Result<f64> {
    let growth = x_j * z.exp_m1();
    if 1.0 + growth <= 0.0 {
        return Err(Error::Ruin { z, weight: x_j });
    }
    Ok(growth.ln_1p())
}

/// `E[e^{Z*}] = 1 + x_j h` for the transformed jump of a position of weight `x_j`.
pub fn scaled_mgf_at_one(x_j: f64, h: f64) -> Result<f64> {
    let value = 1.0 + x_j * h;
    if value <= 0.0 {
        return Err(Error::NonPositiveMoment { weight: x_j, h, value });
    }
    Ok(value)
}

/// Serializable description of a market. [`ModelParams`] is built from it and
/// adds the derived covariance, jump moments and excess drifts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub r: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    #[serde(default)]
    pub lambda_common: f64,
    pub lambda_idio: Vec<f64>,
    pub common_jump_law: Vec<JumpLaw>,
    pub idio_jump_law: Vec<JumpLaw>,
    /// Stored excess drifts; checked against the recomputed value on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
}

impl MarketSpec {
    /// A pure-diffusion market (all intensities zero).
    pub fn without_jumps(r: f64, mu: Vec<f64>, sigma: Vec<f64>, rho: Vec<Vec<f64>>) -> Self {
        let m = mu.len();
        MarketSpec {
            r,
            mu,
            sigma,
            rho,
            lambda_common: 0.0,
            lambda_idio: vec![0.0; m],
            common_jump_law: vec![JumpLaw::ZERO; m],
            idio_jump_law: vec![JumpLaw::ZERO; m],
            a: None,
        }
    }

    /// Same market with the given jump structure.
    pub fn with_jumps(
        mut self,
        lambda_common: f64,
        common_jump_law: Vec<JumpLaw>,
        lambda_idio: Vec<f64>,
        idio_jump_law: Vec<JumpLaw>,
    ) -> Self {
        self.lambda_common = lambda_common;
        self.common_jump_law = common_jump_law;
        self.lambda_idio = lambda_idio;
        self.idio_jump_law = idio_jump_law;
        self.a = None;
        self
    }
}

/// Validated, immutable market parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "MarketSpec", into = "MarketSpec")]
pub struct ModelParams {
    r: f64,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    rho: DMatrix<f64>,
    cov: DMatrix<f64>,
    cov_chol: Cholesky<f64, Dyn>,
    lambda_common: f64,
    lambda_idio: Vec<f64>,
    common_jump_law: Vec<JumpLaw>,
    idio_jump_law: Vec<JumpLaw>,
    h: Vec<[f64; 2]>,
    a: DVector<f64>,
}

impl ModelParams {
    pub fn new(spec: MarketSpec) -> Result<Self> {
        let m = spec.mu.len();
        if m == 0 {
            return Err(Error::invalid("mu", "at least one risky asset is required"));
        }
        let expect = |name: &str, got: usize| -> Result<()> {
            if got != m {
                return Err(Error::invalid(name, format!("length {got}, expected {m}")));
            }
            Ok(())
        };
        expect("sigma", spec.sigma.len())?;
        expect("rho", spec.rho.len())?;
        expect("lambda_idio", spec.lambda_idio.len())?;
        expect("common_jump_law", spec.common_jump_law.len())?;
        expect("idio_jump_law", spec.idio_jump_law.len())?;

        if !spec.r.is_finite() {
            return Err(Error::invalid("r", "must be finite"));
        }
        if spec.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mu", "must be finite"));
        }
        if let Some(j) = spec.sigma.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("sigma", format!("sigma[{j}] must be positive")));
        }
        if !(spec.lambda_common >= 0.0 && spec.lambda_common.is_finite()) {
            return Err(Error::invalid("lambda_common", "must be >= 0"));
        }
        if let Some(j) = spec.lambda_idio.iter().position(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::invalid("lambda_idio", format!("lambda_idio[{j}] must be >= 0")));
        }

        let mut rho = DMatrix::zeros(m, m);
        for (i, row) in spec.rho.iter().enumerate() {
            if row.len() != m {
                return Err(Error::invalid("rho", format!("row {i} has length {}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                rho[(i, j)] = v;
            }
        }
        for i in 0..m {
            if (rho[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::invalid("rho", format!("diagonal entry {i} is not 1")));
            }
            for j in 0..m {
                let v = rho[(i, j)];
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::invalid("rho", format!("entry ({i},{j}) = {v} outside [-1,1]")));
                }
                if (v - rho[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid("rho", "matrix is not symmetric"));
                }
            }
        }

        let cov = DMatrix::from_fn(m, m, |i, j| spec.sigma[i] * spec.sigma[j] * rho[(i, j)]);
        let cov_chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite)?;

        for (j, law) in spec.common_jump_law.iter().enumerate() {
            law.validate(&format!("common_jump_law[{j}]"))?;
        }
        for (j, law) in spec.idio_jump_law.iter().enumerate() {
            law.validate(&format!("idio_jump_law[{j}]"))?;
        }
        let h: Vec<[f64; 2]> = (0..m)
            .map(|j| [spec.common_jump_law[j].h_moment(), spec.idio_jump_law[j].h_moment()])
            .collect();

        let a = DVector::from_fn(m, |j, _| {
            spec.mu[j] - spec.lambda_common * h[j][0] - spec.lambda_idio[j] * h[j][1]
        });
        if let Some(stored) = &spec.a {
            expect("a", stored.len())?;
            for j in 0..m {
                if (stored[j] - a[j]).abs() > 1e-12 {
                    return Err(Error::invalid(
                        "a",
                        format!("stored A[{j}] = {} disagrees with recomputed {}", stored[j], a[j]),
                    ));
                }
            }
        }

        Ok(ModelParams {
            r: spec.r,
            mu: spec.mu,
            sigma: spec.sigma,
            rho,
            cov,
            cov_chol,
            lambda_common: spec.lambda_common,
            lambda_idio: spec.lambda_idio,
            common_jump_law: spec.common_jump_law,
            idio_jump_law: spec.idio_jump_law,
            h,
            a,
        })
    }

    pub fn m(&self) -> usize {
        self.mu.len()
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn rho(&self) -> &DMatrix<f64> {
        &self.rho
    }

    /// Covariance matrix `Sigma_{ij} = sigma_i sigma_j rho_{ij}`.
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn cov_cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.cov_chol
    }

    pub fn lambda_common(&self) -> f64 {
        self.lambda_common
    }

    pub fn lambda_idio(&self) -> &[f64] {
        &self.lambda_idio
    }

    pub fn common_jump_law(&self) -> &[JumpLaw] {
        &self.common_jump_law
    }

    pub fn idio_jump_law(&self) -> &[JumpLaw] {
        &self.idio_jump_law
    }

    /// `h_{j,l}`; `l = 0` for the common jump, `1` for the idiosyncratic one.
    pub fn h(&self, j: usize, l: usize) -> f64 {
        self.h[j][l]
    }

    /// Compensated excess drift vector `A`.
    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn has_jumps(&self) -> bool {
        self.lambda_common > 0.0 || self.lambda_idio.iter().any(|&l| l > 0.0)
    }

    /// Copy of the market with a different risk-free rate.
    pub fn with_rate(&self, r: f64) -> Result<Self> {
        let mut spec = MarketSpec::from(self.clone());
        spec.r = r;
        ModelParams::new(spec)
    }

    pub(crate) fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.m() {
            return Err(Error::DimensionMismatch { expected: self.m(), got: x.len() });
        }
        Ok(())
    }
}

impl TryFrom<MarketSpec> for ModelParams {
    type Error = Error;

    fn try_from(spec: MarketSpec) -> Result<Self> {
        ModelParams::new(spec)
    }
}

impl From<ModelParams> for MarketSpec {
    fn from(p: ModelParams) -> Self {
        let m = p.m();
        MarketSpec {
            r: p.r,
            rho: (0..m).map(|i| (0..m).map(|j| p.rho[(i, j)]).collect()).collect(),
            a: Some(p.a.iter().copied().collect()),
            mu: p.mu,
            sigma: p.sigma,
            lambda_common: p.lambda_common,
            lambda_idio: p.lambda_idio,
            common_jump_law: p.common_jump_law,
            idio_jump_law: p.idio_jump_law,
        }
    }
}

/// Portfolio drift `mu(x) = A'x + r`.
pub fn portfolio_drift(params: &ModelParams, x: &[f64]) -> Result<f64> {
    params.check_len(x)?;
    Ok(params.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + params.r)
}

/// Portfolio diffusion variance `sigma^2(x) = x' Sigma x`.
pub fn portfolio_variance(params: &ModelParams, x: &[f64]) -> Result<f64> {
    params.check_len(x)?;
    let xv = DVector::from_column_slice(x);
    Ok((xv.transpose() * &params.cov * &xv)[(0, 0)].max(0.0))
}

/// Risky-asset weights for one period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub x: Vec<f64>,
    pub cash_fraction: f64,
    pub q: f64,
    pub x_star: Vec<f64>,
}

impl Allocation {
    /// `x = q * x_star`.
    pub fn on_ray(q: f64, x_star: &[f64]) -> Self {
        let x: Vec<f64> = x_star.iter().map(|v| q * v).collect();
        Allocation {
            cash_fraction: 1.0 - x.iter().sum::<f64>(),
            x,
            q,
            x_star: x_star.to_vec(),
        }
    }

    /// Arbitrary weights, recorded as unit scale along themselves.
    pub fn from_weights(x: &[f64]) -> Self {
        Allocation::on_ray(1.0, x)
    }

    pub fn risky_total(&self) -> f64 {
        self.x.iter().sum()
    }
}

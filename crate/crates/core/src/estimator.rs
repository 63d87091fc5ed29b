//! One front end over the three online estimators.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{KalmanConfig, KalmanState, DEFAULT_MEMORY_BUDGET};
use crate::model::{LagBuffer, ParamMatrix, Sample};
use crate::sope::{warmup_len, PenaltySpec, SopeState};
use crate::sope_general::{GeneralSopeConfig, GeneralSopeState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sope,
    Gsope,
    Kf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sope, Method::Gsope, Method::Kf];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sope => "sope",
            Method::Gsope => "gsope",
            Method::Kf => "kf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sope" => Ok(Method::Sope),
            "gsope" => Ok(Method::Gsope),
            "kf" | "kalman" => Ok(Method::Kf),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Hyperparameters for any of the methods; fields not used by the chosen
/// method are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub method: Method,
    pub penalty: PenaltySpec,
    pub q_sigma: f64,
    pub kf_memory_budget: u64,
    pub burn_in: Option<usize>,
}

impl EstimatorConfig {
    pub fn sope(penalty: PenaltySpec) -> Self {
        Self {
            method: Method::Sope,
            penalty,
            q_sigma: 1e-5,
            kf_memory_budget: DEFAULT_MEMORY_BUDGET,
            burn_in: None,
        }
    }

    pub fn gsope(penalty: PenaltySpec) -> Self {
        Self {
            method: Method::Gsope,
            ..Self::sope(penalty)
        }
    }

    pub fn kf(q_sigma: f64) -> Self {
        Self {
            method: Method::Kf,
            q_sigma,
            ..Self::sope(PenaltySpec::default())
        }
    }

    pub fn with_budget(mut self, bytes: u64) -> Self {
        self.kf_memory_budget = bytes;
        self
    }

    fn kalman(&self) -> KalmanConfig {
        KalmanConfig::new(self.q_sigma).with_budget(self.kf_memory_budget)
    }

    fn general(&self) -> GeneralSopeConfig {
        let c = GeneralSopeConfig::new(self.penalty);
        match self.burn_in {
            Some(b) => c.with_burn_in(b),
            None => c,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Estimator {
    Sope(SopeState),
    Gsope(GeneralSopeState),
    Kf(KalmanState),
}

impl Estimator {
    /// Initialise from a warmup window.
    pub fn init(warmup: &[Sample], k: usize, config: &EstimatorConfig) -> Result<Self> {
        Ok(match config.method {
            Method::Sope => Estimator::Sope(SopeState::init(warmup, k, config.penalty)?),
            Method::Gsope => Estimator::Gsope(GeneralSopeState::init(warmup, k, config.general())?),
            Method::Kf => Estimator::Kf(KalmanState::init(warmup, k, &config.kalman())?),
        })
    }

    /// Start from zero estimates and the given lag buffer without fitting
    /// anything; used when only the cost of a step matters.
    pub fn cold(lags: LagBuffer, config: &EstimatorConfig) -> Result<Self> {
        let (p, k) = (lags.p(), lags.k());
        Ok(match config.method {
            Method::Sope | Method::Gsope => {
                config.penalty.validate()?;
                let zero = ParamMatrix::zeros(p, k);
                if config.method == Method::Sope {
                    Estimator::Sope(SopeState::from_parts(zero.clone(), zero, lags, 0, config.penalty))
                } else {
                    Estimator::Gsope(GeneralSopeState::from_parts(zero, lags, 0, 0, config.general())?)
                }
            }
            Method::Kf => Estimator::Kf(KalmanState::new(lags, 0, &config.kalman())?),
        })
    }

    pub fn step(&mut self, x: &DVector<f64>) -> Result<&ParamMatrix> {
        match self {
            Estimator::Sope(s) => {
                if x.len() != s.p() {
                    return Err(Error::Dimension(format!(
                        "sample has {} channels, expected {}",
                        x.len(),
                        s.p()
                    )));
                }
                Ok(s.step(x))
            }
            Estimator::Gsope(s) => s.step(x),
            Estimator::Kf(s) => s.step(x),
        }
    }

    pub fn estimate(&self) -> &ParamMatrix {
        match self {
            Estimator::Sope(s) => s.estimate(),
            Estimator::Gsope(s) => s.estimate(),
            Estimator::Kf(s) => s.estimate(),
        }
    }

    /// Running innovation covariance, where the method tracks one.
    pub fn innovation_cov(&self) -> Option<&DMatrix<f64>> {
        match self {
            Estimator::Gsope(s) => Some(s.sigma()),
            _ => None,
        }
    }
}

/// Run `config.method` over `samples`, calling `f(t, Phi(t), estimator)` per
/// post-warmup step.
pub fn run_with<F>(samples: &[Sample], k: usize, config: &EstimatorConfig, mut f: F) -> Result<()>
where
    F: FnMut(usize, &Estimator) -> Result<()>,
{
    let p = samples.first().map(Sample::dim).unwrap_or(0);
    let w = warmup_len(p, k);
    if samples.len() <= w {
        return Err(Error::InsufficientData {
            needed: w + 1,
            got: samples.len(),
        });
    }
    let mut est = Estimator::init(&samples[..w], k, config)?;
    for s in &samples[w..] {
        est.step(&s.values)?;
        f(s.t, &est)?;
    }
    Ok(())
}

pub fn run(samples: &[Sample], k: usize, config: &EstimatorConfig) -> Result<Vec<ParamMatrix>> {
    let mut out = Vec::with_capacity(samples.len());
    run_with(samples, k, config, |_, e| {
        out.push(e.estimate().clone());
        Ok(())
    })?;
    Ok(out)
}

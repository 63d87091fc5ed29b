//! Declarative run configuration (TOML), overridable from the command line.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bench::DesignSampling;
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, Method};
use crate::kalman::DEFAULT_MEMORY_BUDGET;
use crate::model::SimSpec;
use crate::network::{EventSpec, QuantileScope};
use crate::sope::PenaltySpec;
use crate::spectral::{BandSpec, FreqSpec, Measure, PartialCoherenceScale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Channel count; taken from the input header when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    pub k: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { p: None, k: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KalmanSection {
    pub q_sigma: f64,
    pub memory_budget_mib: u64,
}

impl Default for KalmanSection {
    fn default() -> Self {
        Self {
            q_sigma: 1e-5,
            memory_budget_mib: DEFAULT_MEMORY_BUDGET >> 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreqSection {
    pub omega_s: f64,
    /// Grid spacing in Hz.
    pub spacing: f64,
    pub bands: Vec<BandSpec>,
    pub partial_coherence: PartialCoherenceScale,
}

impl Default for FreqSection {
    fn default() -> Self {
        Self {
            omega_s: 1000.0,
            spacing: 1.0,
            bands: vec![
                BandSpec {
                    name: "theta_alpha".into(),
                    lo: 4.0,
                    hi: 12.0,
                },
                BandSpec {
                    name: "slow_gamma".into(),
                    lo: 20.0,
                    hi: 40.0,
                },
            ],
            partial_coherence: PartialCoherenceScale::Magnitude,
        }
    }
}

impl FreqSection {
    pub fn grid(&self) -> Result<FreqSpec> {
        FreqSpec::uniform(self.omega_s, self.spacing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub quantiles: Vec<f64>,
    pub measures: Vec<Measure>,
    pub scope: QuantileScope,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            quantiles: vec![0.5, 0.75, 0.9],
            measures: Measure::ALL.to_vec(),
            scope: QuantileScope::Epoch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Jsonl,
    /// Binary matrix dump (bench output only).
    Binary,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    /// `None` or `-` means stdin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// `None` or `-` means stdout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Where `simulate` writes the true coefficients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub ps: Vec<usize>,
    pub ks: Vec<usize>,
    pub iterations: usize,
    pub methods: Vec<Method>,
    pub lambdas: Vec<f64>,
    pub q_sigmas: Vec<f64>,
    pub replicates: usize,
    pub design: DesignSampling,
    /// Entries `[row, col]` reported by the transfer study.
    pub entries: Vec<[usize; 2]>,
    /// Half-open window (steps) around the first discontinuity.
    pub jump_window: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            ps: vec![20, 50, 100],
            ks: vec![1, 3, 5],
            iterations: crate::bench::DEFAULT_TIMING_ITERATIONS,
            methods: vec![Method::Sope, Method::Kf],
            lambdas: vec![300.0, 1e3, 2e3, 5e3, 1e4, 3e4],
            q_sigmas: vec![1e-7, 1e-6, 1e-5, 1e-4, 1e-3],
            replicates: 20,
            design: DesignSampling::PerReplicate,
            entries: vec![[0, 0], [0, 1]],
            jump_window: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub method: Method,
    pub model: ModelSection,
    pub penalty: PenaltySpec,
    pub kf: KalmanSection,
    /// Whitening burn-in for `gsope`, in steps (default `10 P`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    pub freq: FreqSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<EventSpec>,
    pub network: NetworkSection,
    pub io: IoSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSpec>,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: Method::Sope,
            model: ModelSection::default(),
            penalty: PenaltySpec::default(),
            kf: KalmanSection::default(),
            burn_in: None,
            freq: FreqSection::default(),
            events: None,
            network: NetworkSection::default(),
            io: IoSection::default(),
            sim: None,
            bench: BenchSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            method: self.method,
            penalty: self.penalty,
            q_sigma: self.kf.q_sigma,
            kf_memory_budget: self.kf.memory_budget_mib << 20,
            burn_in: self.burn_in,
        }
    }

    /// Checks that do not depend on the input data.
    pub fn validate(&self) -> Result<()> {
        if self.model.k == 0 {
            return Err(Error::Config("model.k must be positive".into()));
        }
        match self.method {
            Method::Sope | Method::Gsope => self.penalty.validate()?,
            Method::Kf => {
                if !(self.kf.q_sigma >= 0.0) || !self.kf.q_sigma.is_finite() {
                    return Err(Error::Config("kf.q_sigma must be non-negative".into()));
                }
            }
        }
        self.freq.grid()?;
        for b in &self.freq.bands {
            b.validate(self.freq.omega_s)?;
        }
        for &q in &self.network.quantiles {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Config(format!("quantile {q} must lie in (0, 1)")));
            }
        }
        if let Some(ev) = &self.events {
            if ev.window == 0 {
                return Err(Error::Config("events.window must be positive".into()));
            }
        }
        if let Some(sim) = &self.sim {
            sim.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Event;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn full_round_trips() {
        let mut cfg = RunConfig { method: Method::Gsope, ..Default::default() };
        cfg.model.p = Some(3);
        cfg.burn_in = Some(12);
        cfg.events = Some(EventSpec::new(vec![Event { label: "odor".into(), time: 500 }], 250).unwrap());
        cfg.sim = Some(SimSpec::cosine(3, 2, 2000, 42));
        cfg.io.input = Some("data.csv".into());
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::from_toml(&back.to_toml().unwrap()).unwrap(), back);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml(
            "method = \"kf\"\n[model]\nk = 2\n[kf]\nq_sigma = 1e-4\nmemory_budget_mib = 256\n[penalty]\nalpha = 3000.0\nbeta = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Kf);
        assert_eq!(cfg.penalty.lambda, 3000.0);
        assert_eq!(cfg.estimator().kf_memory_budget, 256 << 20);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn rejects_band_beyond_nyquist() {
        let mut cfg = RunConfig::default();
        cfg.freq.omega_s = 60.0;
        assert!(cfg.validate().is_err());
    }
}

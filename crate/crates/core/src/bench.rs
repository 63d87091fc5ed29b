//! Per-iteration timing, MSE sweeps and transfer studies.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{run_with, Estimator, EstimatorConfig, Method};
use crate::kalman::covariance_bytes;
use crate::model::{make_cosine_coeffs, rng_for, simulate_tvvar, CoeffPath, LagBuffer, SimSpec};
use crate::par;

/// Default number of timed iterations per cell.
pub const DEFAULT_TIMING_ITERATIONS: usize = 1000;
/// Fewest timed iterations accepted.
pub const MIN_TIMING_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: Method,
    pub p: usize,
    pub k: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub iterations: usize,
    pub warmup_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TimingOutcome {
    Measured(TimingRow),
    /// The estimator would not fit in its memory budget.
    Refused {
        method: Method,
        p: usize,
        k: usize,
        needed_bytes: u64,
        budget_bytes: u64,
    },
}

impl TimingOutcome {
    pub fn row(&self) -> Option<&TimingRow> {
        match self {
            TimingOutcome::Measured(r) => Some(r),
            TimingOutcome::Refused { .. } => None,
        }
    }

    pub fn cell(&self) -> (Method, usize, usize) {
        match self {
            TimingOutcome::Measured(r) => (r.method, r.p, r.k),
            TimingOutcome::Refused { method, p, k, .. } => (*method, *p, *k),
        }
    }
}

pub fn timing_warmup(k: usize) -> usize {
    50.max(k + 1)
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Wall time per estimator step on white-noise input at size `(p, k)`.
///
/// The estimator starts cold (no warmup fit); the first
/// [`timing_warmup`] steps are run untimed, then `iterations` steps are
/// timed one by one on a single thread. A Kalman filter whose covariance
/// exceeds `config.kf_memory_budget` is reported as refused.
pub fn time_per_iteration(
    config: &EstimatorConfig,
    p: usize,
    k: usize,
    iterations: usize,
    seed: u64,
) -> Result<TimingOutcome> {
    if iterations < MIN_TIMING_ITERATIONS {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_TIMING_ITERATIONS} timed iterations, got {iterations}"
        )));
    }
    if p == 0 || k == 0 {
        return Err(Error::InvalidParameter("p and k must be positive".into()));
    }
    let warmup = timing_warmup(k);
    let mut rng = rng_for(seed, 0);
    let total = k + warmup + iterations;
    let data: Vec<DVector<f64>> = (0..total)
        .map(|_| DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    let mut lags = LagBuffer::new(p, k);
    for x in &data[..k] {
        lags.push(x);
    }
    let mut est = match Estimator::cold(lags, config) {
        Ok(e) => e,
        Err(Error::MemoryBudget {
            needed_bytes,
            budget_bytes,
            ..
        }) => {
            return Ok(TimingOutcome::Refused {
                method: config.method,
                p,
                k,
                needed_bytes,
                budget_bytes,
            })
        }
        Err(e) => return Err(e),
    };
    par::single_threaded(|| -> Result<TimingOutcome> {
        for x in &data[k..k + warmup] {
            est.step(x)?;
        }
        let mut times = Vec::with_capacity(iterations);
        for x in &data[k + warmup..] {
            let start = Instant::now();
            std::hint::black_box(est.step(std::hint::black_box(x))?);
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
        times.sort_by(|a, b| a.total_cmp(b));
        Ok(TimingOutcome::Measured(TimingRow {
            method: config.method,
            p,
            k,
            mean_ms,
            p50_ms: percentile(&times, 0.5),
            p95_ms: percentile(&times, 0.95),
            iterations,
            warmup_iterations: warmup,
        }))
    })
}

/// Timing grid: every `(k, p)` for each config, sequentially.
pub fn timing_grid(
    configs: &[EstimatorConfig],
    ps: &[usize],
    ks: &[usize],
    iterations: usize,
    seed: u64,
) -> Result<Vec<TimingOutcome>> {
    let mut out = Vec::new();
    for cfg in configs {
        for &k in ks {
            for &p in ps {
                out.push(time_per_iteration(cfg, p, k, iterations, seed)?);
            }
        }
    }
    Ok(out)
}

/// Aligned text table of mean milliseconds per iteration for one method,
/// one row per `K` and one column per `P`. Refused cells read `refused`.
pub fn timing_table(outcomes: &[TimingOutcome], method: Method) -> String {
    let mut ps: Vec<usize> = Vec::new();
    let mut ks: Vec<usize> = Vec::new();
    for o in outcomes.iter().filter(|o| o.cell().0 == method) {
        let (_, p, k) = o.cell();
        if !ps.contains(&p) {
            ps.push(p);
        }
        if !ks.contains(&k) {
            ks.push(k);
        }
    }
    ps.sort_unstable();
    ks.sort_unstable();
    let cell = |p: usize, k: usize| -> String {
        match outcomes.iter().find(|o| o.cell() == (method, p, k)) {
            Some(TimingOutcome::Measured(r)) => format!("{:.4}", r.mean_ms),
            Some(TimingOutcome::Refused { .. }) => "refused".into(),
            None => "-".into(),
        }
    };
    let mut header = vec![format!("{method} (ms)")];
    header.extend(ps.iter().map(|p| format!("P={p}")));
    let mut rows = vec![header];
    for &k in &ks {
        let mut row = vec![format!("K={k}")];
        row.extend(ps.iter().map(|&p| cell(p, k)));
        rows.push(row);
    }
    align(&rows)
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Bytes a Kalman filter at `(p, k)` would need for its covariance.
pub fn kf_bytes(p: usize, k: usize) -> u64 {
    covariance_bytes(p, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hyper {
    Sigma { q_sigma: f64 },
    Penalty { lambda: f64, beta: f64 },
}

impl Hyper {
    pub fn of(config: &EstimatorConfig) -> Self {
        match config.method {
            Method::Kf => Hyper::Sigma {
                q_sigma: config.q_sigma,
            },
            Method::Sope | Method::Gsope => Hyper::Penalty {
                lambda: config.penalty.lambda,
                beta: config.penalty.beta,
            },
        }
    }

    /// The swept scalar: `q_sigma` or `lambda`.
    pub fn value(&self) -> f64 {
        match *self {
            Hyper::Sigma { q_sigma } => q_sigma,
            Hyper::Penalty { lambda, .. } => lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub method: Method,
    pub hyper: Hyper,
    pub per_param_mse: f64,
    pub replicates: usize,
    pub sim: String,
}

/// Whether replicates share one coefficient design or draw their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignSampling {
    Fixed,
    #[default]
    PerReplicate,
}

/// Short human-readable identifier of a simulation design.
pub fn sim_digest(sim: &SimSpec) -> String {
    format!(
        "p{}k{}t{}g{}s{}j{}",
        sim.p,
        sim.k,
        sim.t_total,
        sim.groups.len(),
        sim.seed,
        sim.discontinuities.len()
    )
}

/// Coefficient path of replicate `r`. Data for replicate `r` is drawn from
/// stream `2 r + 1`; designs from stream `2 r` (or stream 0 when fixed).
pub fn replicate_path(sim: &SimSpec, r: usize, design: DesignSampling) -> Result<CoeffPath> {
    let stream = match design {
        DesignSampling::Fixed => 0,
        DesignSampling::PerReplicate => 2 * r as u64,
    };
    make_cosine_coeffs(sim, &mut rng_for(sim.seed, stream))
}

pub fn replicate_data(sim: &SimSpec, path: &CoeffPath, r: usize) -> Result<Vec<crate::model::Sample>> {
    simulate_tvvar(sim, path, &mut rng_for(sim.seed, 2 * r as u64 + 1))
}

/// Mean squared error per parameter for each config, averaged over the
/// post-warmup steps, the `P x KP` entries and `replicates` simulated series.
///
/// Replicates run in parallel; each simulates once and runs every config.
/// Sums are combined in replicate order, so results do not depend on the
/// thread count.
pub fn mse_sweep(
    configs: &[EstimatorConfig],
    sim: &SimSpec,
    replicates: usize,
    design: DesignSampling,
) -> Result<Vec<MseRow>> {
    if configs.is_empty() {
        return Err(Error::InvalidParameter("hyperparameter grid is empty".into()));
    }
    if replicates == 0 {
        return Err(Error::InvalidParameter("need at least one replicate".into()));
    }
    sim.validate()?;
    let per_rep: Vec<Result<Vec<(f64, usize)>>> = par::map_indices(replicates, |r| {
        let path = replicate_path(sim, r, design)?;
        let data = replicate_data(sim, &path, r)?;
        configs
            .iter()
            .map(|cfg| {
                let mut sse = 0.0;
                let mut n = 0usize;
                run_with(&data, sim.k, cfg, |t, est| {
                    sse += (est.estimate().entries() - path.at(t).entries()).norm_squared();
                    n += sim.p * sim.k * sim.p;
                    Ok(())
                })?;
                Ok((sse, n))
            })
            .collect()
    });
    let mut totals = vec![(0.0, 0usize); configs.len()];
    for rep in per_rep {
        for (tot, (sse, n)) in totals.iter_mut().zip(rep?) {
            tot.0 += sse;
            tot.1 += n;
        }
    }
    let digest = sim_digest(sim);
    Ok(configs
        .iter()
        .zip(totals)
        .map(|(cfg, (sse, n))| MseRow {
            method: cfg.method,
            hyper: Hyper::of(cfg),
            per_param_mse: sse / n as f64,
            replicates,
            sim: digest.clone(),
        })
        .collect())
}

/// Lowest-MSE row for `method`.
pub fn best_row(rows: &[MseRow], method: Method) -> Option<&MseRow> {
    rows.iter()
        .filter(|r| r.method == method)
        .min_by(|a, b| a.per_param_mse.total_cmp(&b.per_param_mse))
}

/// Aligned table of an MSE sweep.
pub fn mse_table(rows: &[MseRow]) -> String {
    let mut out = vec![vec![
        "method".to_string(),
        "hyper".to_string(),
        "mse".to_string(),
        "replicates".to_string(),
    ]];
    for r in rows {
        let hyper = match r.hyper {
            Hyper::Sigma { q_sigma } => format!("q_sigma={q_sigma:e}"),
            Hyper::Penalty { lambda, beta } => format!("lambda={lambda:e},beta={beta}"),
        };
        out.push(vec![
            r.method.to_string(),
            hyper,
            format!("{:.6}", r.per_param_mse),
            r.replicates.to_string(),
        ]);
    }
    align(&out)
}

/// Pointwise 2.5 / 50 / 97.5 percentiles of one coefficient entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub method: Method,
    pub row: usize,
    pub col: usize,
    pub t: Vec<usize>,
    pub lo: Vec<f64>,
    pub median: Vec<f64>,
    pub hi: Vec<f64>,
    pub truth: Vec<f64>,
}

impl Envelope {
    /// Fraction of time points where the truth lies inside `[lo, hi]`.
    pub fn coverage(&self) -> f64 {
        let inside = self
            .truth
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .filter(|(v, (lo, hi))| **lo <= **v && **v <= **hi)
            .count();
        inside as f64 / self.truth.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub sim: String,
    pub replicates: usize,
    pub envelopes: Vec<Envelope>,
}

/// Sample times and `[config][entry]` trajectories of one replicate.
type ReplicateTrace = (Vec<usize>, Vec<Vec<Vec<f64>>>);

/// Run tuned estimators on a larger design and summarise the spread of the
/// designated `(row, col)` entries over replicates. All replicates share
/// one coefficient design so that the truth is a single path.
pub fn transfer_study(
    configs: &[EstimatorConfig],
    sim: &SimSpec,
    entries: &[(usize, usize)],
    replicates: usize,
) -> Result<TransferReport> {
    if replicates == 0 {
        return Err(Error::InvalidParameter("need at least one replicate".into()));
    }
    if configs.is_empty() || entries.is_empty() {
        return Err(Error::InvalidParameter("need at least one config and one entry".into()));
    }
    sim.validate()?;
    if let Some(&(r, c)) = entries.iter().find(|&&(r, c)| r >= sim.p || c >= sim.k * sim.p) {
        return Err(Error::InvalidParameter(format!("entry ({r}, {c}) is out of range")));
    }
    let path = replicate_path(sim, 0, DesignSampling::Fixed)?;
    // per replicate: [config][entry] -> trajectory
    let traces: Vec<Result<ReplicateTrace>> = par::map_indices(replicates, |r| {
        let data = replicate_data(sim, &path, r)?;
        let mut times = Vec::new();
        let mut per_cfg = Vec::with_capacity(configs.len());
        for (ci, cfg) in configs.iter().enumerate() {
            let mut tr = vec![Vec::new(); entries.len()];
            run_with(&data, sim.k, cfg, |t, est| {
                if ci == 0 {
                    times.push(t);
                }
                for (slot, &(row, col)) in tr.iter_mut().zip(entries) {
                    slot.push(est.estimate().entries()[(row, col)]);
                }
                Ok(())
            })?;
            per_cfg.push(tr);
        }
        Ok((times, per_cfg))
    });
    let traces: Vec<ReplicateTrace> = traces.into_iter().collect::<Result<_>>()?;
    let times = traces[0].0.clone();
    let mut envelopes = Vec::new();
    let mut column = vec![0.0; replicates];
    for (ci, cfg) in configs.iter().enumerate() {
        for (ei, &(row, col)) in entries.iter().enumerate() {
            let mut env = Envelope {
                method: cfg.method,
                row,
                col,
                t: times.clone(),
                lo: Vec::with_capacity(times.len()),
                median: Vec::with_capacity(times.len()),
                hi: Vec::with_capacity(times.len()),
                truth: times.iter().map(|&t| path.at(t).entries()[(row, col)]).collect(),
            };
            for ti in 0..times.len() {
                for (slot, rep) in column.iter_mut().zip(&traces) {
                    *slot = rep.1[ci][ei][ti];
                }
                env.lo.push(crate::network::quantile(&mut column, 0.025)?);
                env.median.push(crate::network::quantile(&mut column, 0.5)?);
                env.hi.push(crate::network::quantile(&mut column, 0.975)?);
            }
            envelopes.push(env);
        }
    }
    Ok(TransferReport {
        sim: sim_digest(sim),
        replicates,
        envelopes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRow {
    pub method: Method,
    pub hyper: Hyper,
    /// Per-parameter MSE over the `window` steps before the first jump.
    pub before_mse: f64,
    /// Per-parameter MSE over the `window` steps starting at the first jump.
    pub after_mse: f64,
    pub replicates: usize,
}

/// Error just before and just after the first discontinuity in `sim`.
pub fn jump_study(
    configs: &[EstimatorConfig],
    sim: &SimSpec,
    window: usize,
    replicates: usize,
) -> Result<Vec<JumpRow>> {
    let jump = sim
        .discontinuities
        .iter()
        .map(|j| j.time)
        .min()
        .ok_or_else(|| Error::InvalidParameter("design has no discontinuity".into()))?;
    if replicates == 0 || window == 0 {
        return Err(Error::InvalidParameter("need positive replicates and window".into()));
    }
    let path = replicate_path(sim, 0, DesignSampling::Fixed)?;
    let per_rep: Vec<Result<Vec<(f64, f64)>>> = par::map_indices(replicates, |r| {
        let data = replicate_data(sim, &path, r)?;
        configs
            .iter()
            .map(|cfg| {
                let (mut before, mut after) = (0.0, 0.0);
                run_with(&data, sim.k, cfg, |t, est| {
                    let e = (est.estimate().entries() - path.at(t).entries()).norm_squared();
                    if t + window >= jump && t < jump {
                        before += e;
                    } else if t >= jump && t < jump + window {
                        after += e;
                    }
                    Ok(())
                })?;
                Ok((before, after))
            })
            .collect()
    });
    let mut totals = vec![(0.0, 0.0); configs.len()];
    for rep in per_rep {
        for (tot, (b, a)) in totals.iter_mut().zip(rep?) {
            tot.0 += b;
            tot.1 += a;
        }
    }
    let n = (window * sim.p * sim.k * sim.p * replicates) as f64;
    Ok(configs
        .iter()
        .zip(totals)
        .map(|(cfg, (b, a))| JumpRow {
            method: cfg.method,
            hyper: Hyper::of(cfg),
            before_mse: b / n,
            after_mse: a / n,
            replicates,
        })
        .collect())
}

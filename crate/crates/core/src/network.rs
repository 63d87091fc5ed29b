//! Quantile-thresholded connectivity graphs and before/after event deltas.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{ConnectivityFrame, Measure};

/// Default half window: 250 samples (250 ms at 1 kHz).
pub const DEFAULT_HALF_WIDTH: usize = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub label: String,
    pub time: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub events: Vec<Event>,
    #[serde(default = "default_half_width")]
    pub window: usize,
}

fn default_half_width() -> usize {
    DEFAULT_HALF_WIDTH
}

impl EventSpec {
    pub fn new(events: Vec<Event>, window: usize) -> Result<Self> {
        let spec = Self { events, window };
        if spec.window == 0 {
            return Err(Error::InvalidParameter("event window must be positive".into()));
        }
        Ok(spec)
    }

    pub fn first_event(&self) -> Option<usize> {
        self.events.iter().map(|e| e.time).min()
    }
}

/// Which part of the series the thresholds are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileScope {
    #[default]
    Epoch,
    /// Only frames strictly before the first event.
    PreEvent,
}

/// Linear-interpolation quantile of `values` (position `(n-1) q` in the
/// sorted sample).
pub fn quantile(values: &mut [f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("quantile must lie in [0, 1], got {q}")));
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let h = (values.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(values[lo] + (h - lo as f64) * (values[hi] - values[lo]))
}

/// Per-pair `q`-quantile of one measure over a sequence of frames (one band).
pub fn epoch_quantiles(series: &[&DMatrix<f64>], q: f64) -> Result<DMatrix<f64>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile must lie in (0, 1), got {q}")));
    }
    let first = series.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let (r, c) = first.shape();
    if series.iter().any(|m| m.shape() != (r, c)) {
        return Err(Error::Dimension("connectivity frames differ in shape".into()));
    }
    let mut buf = vec![0.0; series.len()];
    let mut out = DMatrix::zeros(r, c);
    for j in 0..c {
        for i in 0..r {
            for (slot, m) in buf.iter_mut().zip(series) {
                *slot = m[(i, j)];
            }
            out[(i, j)] = quantile(&mut buf, q)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowMean {
    pub mean: DMatrix<f64>,
    pub samples: usize,
    /// The requested window ran past an end of the series.
    pub truncated: bool,
}

/// Means over `[center - half_width, center)` and `[center, center + half_width)`.
/// `series` is indexed by time offset from `start`.
pub fn window_means(
    series: &[&DMatrix<f64>],
    start: usize,
    center: usize,
    half_width: usize,
) -> Result<(WindowMean, WindowMean)> {
    let end = start + series.len();
    let before = mean_over(series, start, center.saturating_sub(half_width), center, end)?;
    let after = mean_over(series, start, center, center + half_width, end)?;
    Ok((before, after))
}

fn mean_over(
    series: &[&DMatrix<f64>],
    start: usize,
    from: usize,
    to: usize,
    end: usize,
) -> Result<WindowMean> {
    let lo = from.max(start);
    let hi = to.min(end);
    if lo >= hi {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    // compensated sums, so a constant window averages to exactly its value
    // and compares as a tie against an equal threshold
    let window = &series[lo - start..hi - start];
    let (r, c) = window[0].shape();
    let n = hi - lo;
    let mean = DMatrix::from_fn(r, c, |i, j| neumaier_sum(window.iter().map(|m| m[(i, j)])) / n as f64);
    Ok(WindowMean {
        mean,
        samples: n,
        truncated: lo != from || hi != to,
    })
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeClass {
    Persistent,
    Lost,
    Gained,
    Absent,
}

impl EdgeClass {
    /// Values equal to the threshold do not count as exceeding it.
    pub fn classify(before: f64, after: f64, threshold: f64) -> Self {
        match (before > threshold, after > threshold) {
            (true, true) => EdgeClass::Persistent,
            (true, false) => EdgeClass::Lost,
            (false, true) => EdgeClass::Gained,
            (false, false) => EdgeClass::Absent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub class: EdgeClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDelta {
    pub event: String,
    pub measure: Measure,
    pub band: String,
    pub threshold_quantile: f64,
    pub directed: bool,
    pub scope: QuantileScope,
    pub edges: Vec<Edge>,
    pub truncated: bool,
}

impl NetworkDelta {
    pub fn count(&self, class: EdgeClass) -> usize {
        self.edges.iter().filter(|e| e.class == class).count()
    }

    pub fn class_of(&self, from: usize, to: usize) -> Option<EdgeClass> {
        self.edges
            .iter()
            .find(|e| e.from == from && e.to == to)
            .map(|e| e.class)
    }
}

/// Classify every off-diagonal pair. Undirected measures report `i < j`
/// only; for PDC the edge `j -> i` is read from entry `(i, j)`.
pub fn classify_edges(
    before: &DMatrix<f64>,
    after: &DMatrix<f64>,
    thresholds: &DMatrix<f64>,
    directed: bool,
) -> Result<Vec<Edge>> {
    let shape = thresholds.shape();
    if before.shape() != shape || after.shape() != shape || shape.0 != shape.1 {
        return Err(Error::Dimension("before/after/threshold matrices differ in shape".into()));
    }
    let p = shape.0;
    let mut edges = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i == j || (!directed && j < i) {
                continue;
            }
            let class = EdgeClass::classify(before[(i, j)], after[(i, j)], thresholds[(i, j)]);
            let (from, to) = if directed { (j, i) } else { (i, j) };
            edges.push(Edge { from, to, class });
        }
    }
    Ok(edges)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkQuery {
    pub measure: Measure,
    pub quantile: f64,
    pub scope: QuantileScope,
}

/// Deltas for every event, for one measure/band/quantile. `frames` must be
/// consecutive in time and share one band.
pub fn network_deltas(
    frames: &[ConnectivityFrame],
    events: &EventSpec,
    query: &NetworkQuery,
) -> Result<Vec<NetworkDelta>> {
    let first = frames.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let start = first.t;
    if frames.iter().enumerate().any(|(i, f)| f.t != start + i) {
        return Err(Error::InvalidParameter("connectivity frames must be consecutive in time".into()));
    }
    if frames.iter().any(|f| f.band != first.band) {
        return Err(Error::InvalidParameter("connectivity frames mix bands".into()));
    }
    let series: Vec<&DMatrix<f64>> = frames.iter().map(|f| query.measure.select(f)).collect();
    let pool: &[&DMatrix<f64>] = match query.scope {
        QuantileScope::Epoch => &series,
        QuantileScope::PreEvent => {
            let cut = events
                .first_event()
                .ok_or_else(|| Error::InvalidParameter("pre-event scope needs an event".into()))?;
            &series[..cut.saturating_sub(start).min(series.len())]
        }
    };
    let thresholds = epoch_quantiles(pool, query.quantile)?;
    let end = start + frames.len();
    events
        .events
        .iter()
        .map(|ev| {
            if ev.time < start || ev.time >= end {
                return Err(Error::InvalidParameter(format!(
                    "event {} at t={} is outside the series [{start}, {end})",
                    ev.label, ev.time
                )));
            }
            let (before, after) = window_means(&series, start, ev.time, events.window)?;
            if before.truncated || after.truncated {
                log::warn!("window around event {} truncated at the series edge", ev.label);
            }
            Ok(NetworkDelta {
                event: ev.label.clone(),
                measure: query.measure,
                band: first.band.name.clone(),
                threshold_quantile: query.quantile,
                directed: query.measure.is_directed(),
                scope: query.scope,
                edges: classify_edges(&before.mean, &after.mean, &thresholds, query.measure.is_directed())?,
                truncated: before.truncated || after.truncated,
            })
        })
        .collect()
}

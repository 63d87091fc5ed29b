//! Streaming stages behind the command-line subcommands.
//!
//! Estimation reads samples one at a time and emits one record per
//! post-warmup sample as soon as it is available, so the record for time
//! `t` depends only on samples up to `t`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimator::{Estimator, EstimatorConfig};
use crate::io::{CsvSamples, OutputRecord, RecordKind, RecordWriter};
use crate::model::{ParamMatrix, Sample};
use crate::network::{network_deltas, EventSpec, NetworkDelta, NetworkQuery};
use crate::spectral::{
    band_connectivity_scaled, BandSpec, ConnectivityFrame, FreqSpec, Measure, PartialCoherenceScale,
};
use crate::sope::warmup_len;

/// Feed CSV samples through an estimator, calling `f` for each post-warmup
/// step. Returns the number of steps emitted.
pub fn stream_estimates<R, F>(source: R, k: usize, config: &EstimatorConfig, mut f: F) -> Result<usize>
where
    R: Read,
    F: FnMut(usize, &Estimator) -> Result<()>,
{
    let reader = CsvSamples::new(source)?;
    let p = reader.dim();
    let w = warmup_len(p, k);
    let mut warm: Vec<Sample> = Vec::with_capacity(w);
    let mut est: Option<Estimator> = None;
    let mut emitted = 0;
    for s in reader {
        let s = s?;
        match est.as_mut() {
            None => {
                warm.push(s);
                if warm.len() == w {
                    est = Some(Estimator::init(&warm, k, config)?);
                    warm = Vec::new();
                }
            }
            Some(e) => {
                e.step(&s.values)?;
                f(s.t, e)?;
                emitted += 1;
            }
        }
    }
    if est.is_none() {
        return Err(Error::InsufficientData {
            needed: w + 1,
            got: warm.len(),
        });
    }
    Ok(emitted)
}

pub fn params_record(t: usize, phi: &ParamMatrix, method: &str) -> Result<OutputRecord> {
    let mut rec = OutputRecord::new(RecordKind::Params)
        .at(t)
        .matrix("phi", phi.entries())
        .meta("method", method)?
        .meta("k", phi.k())?;
    if !phi.is_finite() {
        rec = rec.flag("non_finite");
    }
    Ok(rec)
}

/// `estimate`: one params record per post-warmup sample.
pub fn estimate<R: Read, W: Write>(source: R, out: W, k: usize, config: &EstimatorConfig) -> Result<usize> {
    let mut w = RecordWriter::new(out);
    let name = config.method.name();
    stream_estimates(source, k, config, |t, e| {
        let mut rec = params_record(t, e.estimate(), name)?;
        if let Some(sigma) = e.innovation_cov() {
            rec = rec.matrix("sigma", sigma);
        }
        w.write(&rec)
    })
}

pub fn connectivity_record(frame: &ConnectivityFrame) -> Result<OutputRecord> {
    let mut rec = OutputRecord::new(RecordKind::Connectivity)
        .at(frame.t)
        .matrix("coherence", &frame.coherence)
        .matrix("partial_coherence", &frame.partial_coherence)
        .matrix("pdc", &frame.pdc)
        .meta("band", &frame.band)?
        .meta("points", frame.points)?
        .meta("unstable_points", frame.unstable_points)?;
    if frame.is_unstable() {
        rec = rec.flag("unstable_frame");
    }
    Ok(rec)
}

pub fn connectivity_from_record(rec: &OutputRecord) -> Result<ConnectivityFrame> {
    let missing = |what: &str| Error::InvalidParameter(format!("connectivity record lacks {what}"));
    if rec.kind != RecordKind::Connectivity {
        return Err(Error::InvalidParameter(format!("expected a connectivity record, got {:?}", rec.kind)));
    }
    let band: BandSpec = serde_json::from_value(rec.meta.get("band").cloned().ok_or_else(|| missing("band"))?)?;
    let count = |key: &str| rec.meta.get(key).and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    let mat = |name: &str| -> Result<DMatrix<f64>> { rec.get(name).ok_or_else(|| missing(name))?.to_matrix() };
    Ok(ConnectivityFrame {
        t: rec.t.ok_or_else(|| missing("t"))?,
        band,
        coherence: mat("coherence")?,
        partial_coherence: mat("partial_coherence")?,
        pdc: mat("pdc")?,
        points: count("points"),
        unstable_points: count("unstable_points"),
    })
}

/// Settings for the connectivity stage.
#[derive(Debug, Clone)]
pub struct ConnectivitySettings {
    pub bands: Vec<BandSpec>,
    pub freq: FreqSpec,
    pub scale: PartialCoherenceScale,
    /// Innovation covariance; identity when `None`, or the running
    /// estimate for methods that track one.
    pub sigma_e: Option<DMatrix<f64>>,
}

/// Connectivity frames for one coefficient matrix, one per band, evaluated
/// in parallel across bands.
pub fn frames_at(
    t: usize,
    phi: &ParamMatrix,
    sigma_e: &DMatrix<f64>,
    settings: &ConnectivitySettings,
) -> Result<Vec<ConnectivityFrame>> {
    crate::par::map_slice(&settings.bands, |band| {
        band_connectivity_scaled(phi, sigma_e, band, &settings.freq, settings.scale).map(|mut f| {
            f.t = t;
            f
        })
    })
    .into_iter()
    .collect()
}

/// `connectivity`: CSV in, one record per post-warmup sample and band.
pub fn connectivity<R: Read, W: Write>(
    source: R,
    out: W,
    k: usize,
    config: &EstimatorConfig,
    settings: &ConnectivitySettings,
) -> Result<usize> {
    for b in &settings.bands {
        b.validate(settings.freq.omega_s)?;
    }
    let mut w = RecordWriter::new(out);
    let mut identity: Option<DMatrix<f64>> = None;
    let mut n = 0;
    stream_estimates(source, k, config, |t, e| {
        let phi = e.estimate();
        let sigma = match (e.innovation_cov(), &settings.sigma_e) {
            (Some(s), _) => s,
            (None, Some(s)) => s,
            (None, None) => identity.get_or_insert_with(|| DMatrix::identity(phi.p(), phi.p())),
        };
        for frame in frames_at(t, phi, sigma, settings)? {
            w.write(&connectivity_record(&frame)?)?;
            n += 1;
        }
        Ok(())
    })?;
    Ok(n)
}

pub fn network_record(delta: &NetworkDelta) -> Result<OutputRecord> {
    let mut rec = OutputRecord::new(RecordKind::Network)
        .meta("event", &delta.event)?
        .meta("measure", delta.measure)?
        .meta("band", &delta.band)?
        .meta("quantile", delta.threshold_quantile)?
        .meta("directed", delta.directed)?
        .meta("scope", delta.scope)?
        .meta("edges", &delta.edges)?;
    if delta.truncated {
        rec = rec.flag("truncated_window");
    }
    Ok(rec)
}

/// `network`: group connectivity records by band, then classify edges for
/// every event, measure and quantile.
pub fn network(
    records: &[OutputRecord],
    events: &EventSpec,
    measures: &[Measure],
    quantiles: &[f64],
    scope: crate::network::QuantileScope,
) -> Result<Vec<NetworkDelta>> {
    let mut by_band: BTreeMap<String, Vec<ConnectivityFrame>> = BTreeMap::new();
    for rec in records.iter().filter(|r| r.kind == RecordKind::Connectivity) {
        let f = connectivity_from_record(rec)?;
        by_band.entry(f.band.name.clone()).or_default().push(f);
    }
    if by_band.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut out = Vec::new();
    for frames in by_band.values_mut() {
        frames.sort_by_key(|f| f.t);
        for &measure in measures {
            for &quantile in quantiles {
                let query = NetworkQuery {
                    measure,
                    quantile,
                    scope,
                };
                out.extend(network_deltas(frames, events, &query)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{read_records, write_csv};
    use crate::model::{make_cosine_coeffs, rng_for, simulate_tvvar, SimSpec};
    use crate::sope::PenaltySpec;

    fn csv_bytes(n: usize) -> Vec<u8> {
        let spec = SimSpec::cosine(2, 1, n, 8);
        let path = make_cosine_coeffs(&spec, &mut rng_for(8, 0)).unwrap();
        let data = simulate_tvvar(&spec, &path, &mut rng_for(8, 1)).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &["a".into(), "b".into()], &data).unwrap();
        buf
    }

    #[test]
    fn estimate_emits_one_record_per_post_warmup_sample() {
        let cfg = EstimatorConfig::sope(PenaltySpec::new(100.0, 0.5).unwrap());
        let mut out = Vec::new();
        let n = estimate(csv_bytes(200).as_slice(), &mut out, 1, &cfg).unwrap();
        assert_eq!(n, 200 - warmup_len(2, 1));
        let recs = read_records(out.as_slice()).unwrap();
        assert_eq!(recs.len(), n);
        assert_eq!(recs[0].t, Some(warmup_len(2, 1)));
    }

    #[test]
    fn too_short_input_is_an_error() {
        let cfg = EstimatorConfig::sope(PenaltySpec::default());
        assert!(matches!(
            estimate(csv_bytes(20).as_slice(), Vec::new(), 1, &cfg),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn connectivity_records_round_trip() {
        let cfg = EstimatorConfig::sope(PenaltySpec::new(100.0, 0.5).unwrap());
        let settings = ConnectivitySettings {
            bands: vec![BandSpec::new("lo", 1.0, 5.0).unwrap(), BandSpec::new("hi", 20.0, 40.0).unwrap()],
            freq: FreqSpec::uniform(100.0, 1.0).unwrap(),
            scale: PartialCoherenceScale::Magnitude,
            sigma_e: None,
        };
        let mut out = Vec::new();
        let n = connectivity(csv_bytes(80).as_slice(), &mut out, 1, &cfg, &settings).unwrap();
        assert_eq!(n, 2 * (80 - warmup_len(2, 1)));
        let recs = read_records(out.as_slice()).unwrap();
        let f = connectivity_from_record(&recs[1]).unwrap();
        assert_eq!(f.band.name, "hi");
        assert_eq!(connectivity_record(&f).unwrap(), recs[1]);
    }
}

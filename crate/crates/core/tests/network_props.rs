use nalgebra::DMatrix;
use proptest::prelude::*;
use tvvar::network::{
    classify_edges, network_deltas, quantile, EdgeClass, Event, EventSpec, NetworkQuery, QuantileScope,
};
use tvvar::spectral::{BandSpec, ConnectivityFrame, Measure};

fn frame(t: usize, m: DMatrix<f64>) -> ConnectivityFrame {
    ConnectivityFrame {
        t,
        band: BandSpec::new("b", 1.0, 2.0).unwrap(),
        coherence: m.clone(),
        partial_coherence: m.clone(),
        pdc: m,
        points: 1,
        unstable_points: 0,
    }
}

fn sym(p: usize, vals: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::from_element(p, p, 1.0);
    let mut it = vals.iter();
    for i in 0..p {
        for j in i + 1..p {
            let v = *it.next().unwrap();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

proptest! {
    #[test]
    fn quantile_is_monotone_and_bounded(mut v in prop::collection::vec(-1e3f64..1e3, 1..200), q1 in 0.0f64..=1.0, q2 in 0.0f64..=1.0) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let a = quantile(&mut v, lo).unwrap();
        let b = quantile(&mut v, hi).unwrap();
        prop_assert!(a <= b);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= a && b <= max);
    }

    #[test]
    fn undirected_edges_partition_upper_triangle(
        p in 2usize..7, seed in prop::collection::vec(0.0f64..1.0, 63), q in prop::sample::select(vec![0.5, 0.75, 0.9]),
    ) {
        let n = p * (p - 1) / 2;
        let frames: Vec<ConnectivityFrame> = (0..30)
            .map(|t| frame(t, sym(p, &(0..n).map(|e| seed[(t + 7 * e) % seed.len()]).collect::<Vec<_>>())))
            .collect();
        let events = EventSpec::new(vec![Event { label: "e".into(), time: 15 }], 5).unwrap();
        for scope in [QuantileScope::Epoch, QuantileScope::PreEvent] {
            let d = &network_deltas(&frames, &events, &NetworkQuery { measure: Measure::Coherence, quantile: q, scope }).unwrap()[0];
            prop_assert_eq!(d.edges.len(), n);
            prop_assert!(d.edges.iter().all(|e| e.from < e.to));
            let total: usize = [EdgeClass::Persistent, EdgeClass::Lost, EdgeClass::Gained, EdgeClass::Absent]
                .iter().map(|&c| d.count(c)).sum();
            prop_assert_eq!(total, n);
        }
    }

    #[test]
    fn classification_commutes_with_transpose(p in 2usize..6, vals in prop::collection::vec(0.0f64..1.0, 3 * 36)) {
        let pick = |o: usize| DMatrix::from_fn(p, p, |i, j| vals[o + i * p + j]);
        let (before, after, thr) = (pick(0), pick(36), pick(72));
        let sym = |m: &DMatrix<f64>| (m + m.transpose()) * 0.5;
        let edges = classify_edges(&sym(&before), &sym(&after), &sym(&thr), false).unwrap();
        let swapped = classify_edges(&sym(&before).transpose(), &sym(&after).transpose(), &sym(&thr).transpose(), false).unwrap();
        prop_assert_eq!(edges, swapped);
        let directed = classify_edges(&before, &after, &thr, true).unwrap();
        prop_assert_eq!(directed.len(), p * (p - 1));
        for e in &directed {
            prop_assert_eq!(e.class, EdgeClass::classify(before[(e.to, e.from)], after[(e.to, e.from)], thr[(e.to, e.from)]));
        }
    }
}

#[test]
fn ties_do_not_exceed_the_threshold() {
    assert_eq!(EdgeClass::classify(0.5, 0.5, 0.5), EdgeClass::Absent);
    assert_eq!(EdgeClass::classify(0.6, 0.5, 0.5), EdgeClass::Lost);
    assert_eq!(EdgeClass::classify(0.5, 0.6, 0.5), EdgeClass::Gained);
    assert_eq!(EdgeClass::classify(0.6, 0.6, 0.5), EdgeClass::Persistent);
}

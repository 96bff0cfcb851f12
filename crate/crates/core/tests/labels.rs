//! Centricity labels, regression targets and positive assignment against a
//! brute-force reference.

use avtad_core::labels::{
    assign_positives, boundary_labels, centricity_label, centricity_label_with, match_timestep, regression_targets,
    relative_distance, CentreNormalizer, GroundTruthSegment, LabelConfig, RegressionRanges,
};
use proptest::prelude::*;

fn seg(s: f64, e: f64, v: usize, n: usize) -> GroundTruthSegment {
    GroundTruthSegment::new(s, e, v, n).unwrap()
}

#[test]
fn centricity_closed_form() {
    let g = seg(2.0, 6.0, 0, 0);
    assert_eq!(centricity_label(4.0, &g, 1.7).unwrap(), 1.0);
    let edge = (-1.0 / (2.0 * 1.7 * 1.7_f64)).exp();
    assert!((centricity_label(2.0, &g, 1.7).unwrap() - edge).abs() < 1e-12);
    assert!((centricity_label(6.0, &g, 1.7).unwrap() - edge).abs() < 1e-12);
    assert!(centricity_label(6.5, &g, 1.7).is_err());
    assert!(centricity_label(4.0, &g, 0.0).is_err());
}

#[test]
fn centricity_sweep_is_symmetric_and_monotone() {
    let g = seg(1.0, 9.0, 0, 0);
    let n = 1000;
    let xs: Vec<f64> = (0..n).map(|i| 1.0 + 8.0 * i as f64 / (n - 1) as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| centricity_label(x, &g, 1.7).unwrap()).collect();
    for (i, &x) in xs.iter().enumerate() {
        let mirror = centricity_label(10.0 - x, &g, 1.7).unwrap();
        assert!((ys[i] - mirror).abs() < 1e-12);
        assert!(ys[i] > 0.0 && ys[i] <= 1.0);
    }
    let half = n / 2;
    assert!(ys[..half].windows(2).all(|w| w[1] >= w[0]));
    assert!(ys[half..].windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn level_stride_normaliser() {
    let g = seg(0.0, 8.0, 0, 0);
    let y = centricity_label_with(6.0, &g, 1.0, CentreNormalizer::LevelStride, 2.0).unwrap();
    assert!((y - (-0.5_f64).exp()).abs() < 1e-15);
}

#[test]
fn regression_and_boundary_targets() {
    let g = seg(2.0, 10.0, 0, 0);
    assert_eq!(regression_targets(4.0, &g, 2.0), (1.0, 3.0));
    let (ps, pe) = boundary_labels(2.0, &[g], 1.7);
    assert_eq!(ps, 1.0);
    assert!((pe - (-4.0 / (2.0 * 1.7 * 1.7_f64)).exp()).abs() < 1e-15);
    assert_eq!(boundary_labels(2.0, &[], 1.7), (0.0, 0.0));
}

#[test]
fn ties_prefer_shorter_then_earlier() {
    let segs = [seg(0.0, 10.0, 0, 0), seg(3.0, 7.0, 1, 0), seg(2.0, 6.0, 2, 0)];
    assert_eq!(match_timestep(5.0, (0.0, 100.0), &segs), Some(2));
    assert_eq!(match_timestep(6.5, (0.0, 100.0), &segs), Some(1));
    // Out of the range of every covering segment.
    assert_eq!(match_timestep(5.0, (20.0, 100.0), &segs), None);
}

/// Straightforward re-derivation: enumerate all candidates, sort by
/// (duration, start, index) and take the first.
fn reference(
    segs: &[GroundTruthSegment],
    lens: &[usize],
    strides: &[f64],
    ranges: &[(f64, f64)],
    cv: usize,
    cn: usize,
    sigma: f64,
) -> (Vec<Option<usize>>, Vec<f64>, Vec<Option<(f64, f64)>>, Vec<f64>, Vec<(f64, f64)>) {
    let (mut m, mut c, mut o, mut cls, mut b) = (vec![], vec![], vec![], vec![], vec![]);
    for l in 0..lens.len() {
        for t in 0..lens[l] {
            let x = t as f64 * strides[l];
            let mut cands: Vec<usize> = (0..segs.len())
                .filter(|&i| {
                    let s = &segs[i];
                    let reach = (x - s.start).max(s.end - x);
                    s.start <= x && x <= s.end && reach >= ranges[l].0 && reach <= ranges[l].1
                })
                .collect();
            cands.sort_by(|&a, &bb| {
                let (sa, sb) = (&segs[a], &segs[bb]);
                (sa.end - sa.start)
                    .partial_cmp(&(sb.end - sb.start))
                    .unwrap()
                    .then(sa.start.partial_cmp(&sb.start).unwrap())
                    .then(a.cmp(&bb))
            });
            let hit = cands.first().copied();
            m.push(hit);
            let mut row = vec![0.0; cv + cn];
            match hit {
                Some(i) => {
                    let s = &segs[i];
                    let d = (x - (s.start + s.end) / 2.0).abs() / ((s.end - s.start) / 2.0);
                    c.push((-d * d / (2.0 * sigma * sigma)).exp());
                    o.push(Some(((x - s.start) / strides[l], (s.end - x) / strides[l])));
                    row[s.verb] = 1.0;
                    row[cv + s.noun] = 1.0;
                }
                None => {
                    c.push(0.0);
                    o.push(None);
                }
            }
            cls.extend(row);
            let mut best = (0.0f64, 0.0f64);
            for s in segs {
                let h = (s.end - s.start) / 2.0;
                let gs = (-((x - s.start) / h).powi(2) / (2.0 * sigma * sigma)).exp();
                let ge = (-((x - s.end) / h).powi(2) / (2.0 * sigma * sigma)).exp();
                best = (best.0.max(gs), best.1.max(ge));
            }
            b.push(best);
        }
    }
    (m, c, o, cls, b)
}

fn arb_segments() -> impl Strategy<Value = Vec<GroundTruthSegment>> {
    prop::collection::vec((0.0f64..30.0, 0.25f64..12.0, 0usize..3, 0usize..4), 0..8).prop_map(|v| {
        v.into_iter()
            .map(|(s, d, verb, noun)| seg(s, (s + d).min(32.0).max(s + 0.25), verb, noun))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assignment_matches_reference(segs in arb_segments()) {
        let lens = [64, 32, 16, 8];
        let strides = [0.5, 1.0, 2.0, 4.0];
        let ranges = RegressionRanges::from_stride_units(&[(0.0, 4.0), (4.0, 8.0), (8.0, 16.0), (16.0, f64::INFINITY)], 0.5).unwrap();
        let cfg = LabelConfig::default();
        let t = assign_positives(&segs, &lens, &strides, &ranges, 3, 4, &cfg).unwrap();
        let (m, c, o, cls, b) = reference(&segs, &lens, &strides, &ranges.0, 3, 4, cfg.sigma);
        prop_assert_eq!(&t.matched, &m);
        prop_assert_eq!(&t.offsets, &o);
        prop_assert_eq!(&t.classes, &cls);
        for (x, y) in t.centricity.iter().zip(&c) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in t.boundary.iter().zip(&b) {
            prop_assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
        }
        // Positives lie inside their segment with non-negative offsets.
        for (i, mm) in t.matched.iter().enumerate() {
            if let Some(k) = mm {
                let (l, step) = t.locate(i);
                let x = step as f64 * strides[l];
                prop_assert!(segs[*k].contains(x));
                let (a, bb) = t.offsets[i].unwrap();
                prop_assert!(a >= 0.0 && bb >= 0.0);
            }
        }
    }

    #[test]
    fn relative_distance_in_unit_interval(s in 0.0f64..10.0, d in 0.1f64..10.0, u in 0.0f64..=1.0) {
        let g = seg(s, s + d, 0, 0);
        let x = s + u * d;
        let r = relative_distance(x, &g);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&r));
        let c = centricity_label(x, &g, 1.7).unwrap();
        prop_assert!(c >= (-1.0 / (2.0 * 1.7 * 1.7_f64)).exp() - 1e-12 && c <= 1.0);
    }
}

#[test]
fn class_outside_range_rejected() {
    let ranges = RegressionRanges::from_stride_units(&[(0.0, f64::INFINITY)], 1.0).unwrap();
    let r = assign_positives(&[seg(0.0, 1.0, 5, 0)], &[4], &[1.0], &ranges, 3, 3, &LabelConfig::default());
    assert!(r.is_err());
    assert!(RegressionRanges::from_stride_units(&[(0.0, 4.0), (2.0, 3.0)], 1.0).is_err());
}

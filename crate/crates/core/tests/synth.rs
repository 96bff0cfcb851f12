//! Statistical checks of the synthetic video generator.

use avtad_core::encoder::Modality;
use avtad_core::synth::{generate_dataset, mean_overlap_count, Prototypes, SynthConfig, SyntheticVideo};
use proptest::prelude::*;

fn cfg(n: usize) -> SynthConfig {
    SynthConfig {
        n_videos: n,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_bits() {
    let a = generate_dataset(&cfg(3), "train").unwrap();
    let b = generate_dataset(&cfg(3), "train").unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(&SynthConfig { seed: 8, ..cfg(3) }, "train").unwrap();
    assert_ne!(a[0].segments, c[0].segments);
}

#[test]
fn segment_count_within_poisson_bounds() {
    let c = cfg(100);
    let videos = generate_dataset(&c, "count").unwrap();
    let total: usize = videos.iter().map(|v| v.segments.len()).sum();
    let lambda = c.density * c.duration_seconds / 60.0 * 100.0;
    assert!((total as f64 - lambda).abs() <= 3.0 * lambda.sqrt(), "{total} vs {lambda}");
}

#[test]
fn videos_are_well_formed_and_overlapping() {
    let c = cfg(10);
    let videos = generate_dataset(&c, "shape").unwrap();
    let mut overlap = 0.0;
    for v in &videos {
        assert_eq!(v.visual.len(), c.timesteps());
        assert_eq!(v.audio.len(), v.visual.len());
        assert_eq!(v.visual.stride_seconds, v.audio.stride_seconds);
        for s in &v.segments {
            assert!(0.0 <= s.start && s.start < s.end && s.end <= v.duration);
        }
        overlap += mean_overlap_count(&v.segments);
    }
    assert!(overlap / 10.0 > 0.5);
    let sparse = generate_dataset(&SynthConfig { density: 2.0, ..cfg(10) }, "shape").unwrap();
    let sparse_overlap: f64 = sparse.iter().map(|v| mean_overlap_count(&v.segments)).sum::<f64>() / 10.0;
    assert!(sparse_overlap < overlap / 10.0);
}

/// `(features, label)` for timesteps covered by exactly one segment, with the
/// segment's verb as label; or, with `background`, uncovered timesteps labelled
/// with the verb of the next segment to start.
fn samples(videos: &[SyntheticVideo], audio: bool, background: bool) -> Vec<(Vec<f64>, usize)> {
    let mut out = Vec::new();
    for v in videos {
        let seq = if audio { &v.audio } else { &v.visual };
        for t in 0..seq.len() {
            let x = t as f64 * seq.stride_seconds;
            let covering: Vec<_> = v.segments.iter().filter(|s| s.contains(x)).collect();
            let label = if background {
                if !covering.is_empty() {
                    continue;
                }
                match v.segments.iter().find(|s| s.start > x) {
                    Some(s) => s.verb,
                    None => continue,
                }
            } else {
                if covering.len() != 1 {
                    continue;
                }
                covering[0].verb
            };
            out.push((seq.features.row(t).to_vec(), label));
        }
    }
    out
}

/// Nearest-class-mean linear probe: fit on `train`, accuracy on `test`.
fn probe(train: &[(Vec<f64>, usize)], test: &[(Vec<f64>, usize)], classes: usize) -> f64 {
    let d = train[0].0.len();
    let mut means = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    for (x, y) in train {
        means[*y].iter_mut().zip(x).for_each(|(m, v)| *m += v);
        counts[*y] += 1;
    }
    for (m, c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= (*c).max(1) as f64);
    }
    let hits = test
        .iter()
        .filter(|(x, y)| {
            let dist = |m: &Vec<f64>| m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (0..classes).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b]))).unwrap() == *y
        })
        .count();
    hits as f64 / test.len() as f64
}

/// Largest class frequency in `test`, a stand-in for chance when classes are unbalanced.
fn majority(test: &[(Vec<f64>, usize)], classes: usize) -> f64 {
    let mut c = vec![0usize; classes];
    test.iter().for_each(|(_, y)| c[*y] += 1);
    *c.iter().max().unwrap() as f64 / test.len() as f64
}

#[test]
fn uninformative_audio_probes_at_chance() {
    let base = SynthConfig {
        audio_informativeness: 0.0,
        ..cfg(12)
    };
    let train = generate_dataset(&base, "probe-train").unwrap();
    let test = generate_dataset(&base, "probe-test").unwrap();
    let (tr, te) = (samples(&train, true, false), samples(&test, true, false));
    let acc = probe(&tr, &te, base.num_verbs);
    let chance = 1.0 / base.num_verbs as f64;
    let n = te.len() as f64;
    let sd = (chance * (1.0 - chance) / n).sqrt();
    assert!(acc < majority(&te, base.num_verbs) + 4.0 * sd, "audio probe {acc}");
    assert!((acc - chance).abs() < 0.08, "audio probe {acc} vs chance {chance}");

    // The same probe separates the informative streams.
    let vis = probe(&samples(&train, false, false), &samples(&test, false, false), base.num_verbs);
    assert!(vis > chance + 0.3, "visual probe {vis}");
    let info = SynthConfig {
        audio_informativeness: 1.0,
        audio_onset_bias: 0.0,
        ..base
    };
    let train = generate_dataset(&info, "probe-train").unwrap();
    let test = generate_dataset(&info, "probe-test").unwrap();
    let aud = probe(&samples(&train, true, false), &samples(&test, true, false), info.num_verbs);
    assert!(aud > chance + 0.3, "informative audio probe {aud}");
}

#[test]
fn background_features_carry_no_class() {
    let c = cfg(12);
    let train = generate_dataset(&c, "bg-train").unwrap();
    let test = generate_dataset(&c, "bg-test").unwrap();
    let te = samples(&test, false, true);
    let acc = probe(&samples(&train, false, true), &te, c.num_verbs);
    assert!((acc - 1.0 / c.num_verbs as f64).abs() < 0.1, "background probe {acc}");
}

#[test]
fn audio_is_strongest_at_onsets() {
    let c = SynthConfig {
        audio_noise: 0.0,
        ..cfg(4)
    };
    let protos = Prototypes::generate(c.seed, Modality::Audio, c.num_verbs, c.num_nouns, c.audio_dim);
    let videos = generate_dataset(&c, "onset").unwrap();
    let (mut early, mut late) = (Vec::new(), Vec::new());
    for v in &videos {
        for s in v.segments.iter().filter(|s| s.duration() > 6.0) {
            let p = protos.pair(s.verb, s.noun, c.audio_verb_share);
            let at = |x: f64| {
                let t = (x / c.base_stride_seconds).round() as usize;
                v.audio.features.row(t).iter().zip(&p).map(|(a, b)| a * b).sum::<f64>()
            };
            early.push(at(s.start + 1.0));
            late.push(at(s.end - 1.0));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!early.is_empty());
    assert!(mean(&early) > mean(&late) + 0.2, "{} vs {}", mean(&early), mean(&late));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pair_prototypes_are_unit_norm(seed in 0u64..1000, w in 0.0f64..=1.0) {
        let p = Prototypes::generate(seed, Modality::Visual, 4, 6, 16);
        for v in 0..4 {
            for n in 0..6 {
                let norm: f64 = p.pair(v, n, w).iter().map(|x| x * x).sum();
                prop_assert!((norm - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn segments_stay_inside_the_video(seed in 0u64..1000, density in 1.0f64..40.0) {
        let c = SynthConfig { n_videos: 2, seed, density, duration_seconds: 32.0, ..Default::default() };
        for v in generate_dataset(&c, "p").unwrap() {
            for s in &v.segments {
                prop_assert!(s.start >= 0.0 && s.end <= 32.0 && s.start < s.end);
            }
        }
    }
}

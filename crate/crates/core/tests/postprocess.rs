//! Confidence scoring, candidate generation and Soft-NMS against exhaustive
//! references.

use avtad_core::config::{BaselineMode, RunConfig};
use avtad_core::eval::tiou_unchecked;
use avtad_core::postprocess::{
    confidence_score, proposal_candidates, rank_order, run_postprocess, soft_nms, Detection, PostprocessConfig,
    Proposal, ProposalSet, ScoreWeights, Task,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn proposal(rng: &mut ChaCha8Rng, cv: usize, cn: usize, audio: bool) -> Proposal {
    let s = rng.random_range(0.0..20.0);
    let mut scores = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(0.0..1.0)).collect() };
    let verb_scores = scores(cv);
    let noun_scores = scores(cn);
    let (audio_verb, audio_noun) = if audio {
        (Some(scores(cv)), Some(scores(cn)))
    } else {
        (None, None)
    };
    Proposal {
        start: s,
        end: s + rng.random_range(0.5..8.0),
        verb_scores,
        noun_scores,
        audio_verb,
        audio_noun,
        centricity: rng.random_range(0.0..1.0),
        start_conf: rng.random_range(0.0..1.0),
        end_conf: rng.random_range(0.0..1.0),
        level: 0,
        timestep: 0,
    }
}

#[test]
fn score_is_linear_in_every_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let w = ScoreWeights {
            tau: rng.random_range(0.0..2.0),
            beta: rng.random_range(0.0..2.0),
            gamma: rng.random_range(0.0..2.0),
        };
        let p: [f64; 5] = core::array::from_fn(|_| rng.random_range(0.0..1.0));
        let expected = p[0] + w.tau * p[1] + w.beta * p[2] + w.gamma * (p[3] + p[4]);
        assert_eq!(confidence_score(p[0], p[1], p[2], p[3], p[4], &w), expected);
    }
    let zero = ScoreWeights {
        tau: 0.0,
        beta: 0.0,
        gamma: 0.0,
    };
    assert_eq!(confidence_score(0.37, 0.9, 0.8, 0.7, 0.6, &zero), 0.37);
}

#[test]
fn action_candidates_carry_the_full_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = PostprocessConfig::default();
    let w = cfg.weights;
    for _ in 0..50 {
        let p = proposal(&mut rng, 3, 4, true);
        let c = proposal_candidates(&p, Task::Action, &cfg);
        assert_eq!(c.len(), 12);
        for d in c {
            let pv = p.verb_scores[d.verb] + p.noun_scores[d.noun];
            let pa = p.audio_verb.as_ref().unwrap()[d.verb] + p.audio_noun.as_ref().unwrap()[d.noun];
            let s = pv + w.tau * pa + w.beta * p.centricity + w.gamma * (p.start_conf + p.end_conf);
            assert!((d.score - s).abs() < 1e-12);
        }
    }
}

#[test]
fn boundary_confidence_ignored_without_boundary_heads() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for mode in ["actionformer_like", "tridet_like"] {
        let mut rc = RunConfig::default();
        rc.set("baseline.mode", mode).unwrap();
        let cfg = rc.effective_post();
        assert_eq!(cfg.weights.gamma, 0.0);
        for _ in 0..50 {
            let p = proposal(&mut rng, 3, 3, true);
            let mut q = p.clone();
            q.start_conf = rng.random_range(0.0..1.0);
            q.end_conf = rng.random_range(0.0..1.0);
            for task in Task::ALL {
                assert_eq!(proposal_candidates(&p, task, &cfg), proposal_candidates(&q, task, &cfg));
            }
        }
    }
    assert_eq!(ScoreWeights::default().for_mode(BaselineMode::RabLike).gamma, 0.7);
}

/// Recomputes every remaining score from scratch at each step as the original
/// score times the decay of every already-emitted same-class detection.
fn soft_nms_reference(dets: &[Detection], task: Task, sigma: f64, floor: f64, max_out: usize) -> Vec<Detection> {
    let mut emitted: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    while out.len() < max_out && emitted.len() < dets.len() {
        let current = |i: usize| -> Detection {
            let mut d = dets[i];
            for &j in &emitted {
                if task.key(dets[j].verb, dets[j].noun) == task.key(d.verb, d.noun) {
                    let iou = tiou_unchecked((dets[j].start, dets[j].end), (d.start, d.end));
                    d.score *= (-iou * iou / sigma).exp();
                }
            }
            d
        };
        let mut rest: Vec<(usize, Detection)> =
            (0..dets.len()).filter(|i| !emitted.contains(i)).map(|i| (i, current(i))).collect();
        rest.sort_by(|a, b| rank_order(&a.1, &b.1));
        let (i, d) = rest[0];
        if d.score < floor {
            break;
        }
        emitted.push(i);
        out.push(d);
    }
    out
}

fn random_dets(rng: &mut ChaCha8Rng, n: usize, grid: bool) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let (s, e) = if grid {
                let s = rng.random_range(0..8) as f64;
                (s, s + rng.random_range(1..4) as f64)
            } else {
                let s = rng.random_range(0.0..10.0);
                (s, s + rng.random_range(0.2..5.0))
            };
            Detection {
                start: s,
                end: e,
                verb: rng.random_range(0..2),
                noun: rng.random_range(0..2),
                score: rng.random_range(0.0..1.0),
            }
        })
        .collect()
}

#[test]
fn soft_nms_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for i in 0..200 {
        let n = rng.random_range(0..=10);
        let dets = random_dets(&mut rng, n, i % 2 == 0);
        let task = Task::ALL[i % 3];
        let sigma = rng.random_range(0.1..1.0);
        let max_out = rng.random_range(1..=12);
        let got = soft_nms(dets.clone(), task, sigma, 1e-3, max_out);
        let want = soft_nms_reference(&dets, task, sigma, 1e-3, max_out);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert_eq!((a.start, a.end, a.verb, a.noun), (b.start, b.end, b.verb, b.noun));
            assert!((a.score - b.score).abs() <= 1e-12);
        }
    }
}

/// Classic NMS: keep the best, drop every same-class detection that overlaps it.
fn hard_nms(dets: &[Detection], task: Task) -> Vec<Detection> {
    let mut rest = dets.to_vec();
    rest.sort_by(rank_order);
    let mut out: Vec<Detection> = Vec::new();
    for d in rest {
        let clash = out.iter().any(|k| {
            task.key(k.verb, k.noun) == task.key(d.verb, d.noun) && tiou_unchecked((k.start, k.end), (d.start, d.end)) > 0.0
        });
        if !clash {
            out.push(d);
        }
    }
    out
}

#[test]
fn tiny_sigma_is_hard_nms() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for i in 0..200 {
        let n = rng.random_range(0..=10);
        let mut dets = random_dets(&mut rng, n, true);
        for d in dets.iter_mut() {
            d.score = 0.01 + d.score;
        }
        let task = Task::ALL[i % 3];
        let got = soft_nms(dets.clone(), task, 1e-6, 1e-3, 100);
        let want = hard_nms(&dets, task);
        assert_eq!(got, want);
    }
}

#[test]
fn postprocess_is_deterministic_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let set = ProposalSet {
        video_id: "v".into(),
        proposals: (0..30).map(|_| proposal(&mut rng, 4, 5, false)).collect(),
    };
    let cfg = PostprocessConfig {
        max_detections: 25,
        ..Default::default()
    };
    let a = run_postprocess(&set, &cfg).unwrap();
    let b = run_postprocess(&set, &cfg).unwrap();
    assert_eq!(a, b);
    for task in Task::ALL {
        let d = &a.get(task).detections;
        assert!(d.len() <= 25);
        assert!(d.windows(2).all(|w| w[0].score >= w[1].score));
    }
}

proptest! {
    #[test]
    fn soft_nms_never_raises_scores(seed in 0u64..10_000, sigma in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dets = random_dets(&mut rng, 8, false);
        let out = soft_nms(dets.clone(), Task::Action, sigma, 0.0, 100);
        prop_assert_eq!(out.len(), dets.len());
        for d in &out {
            let orig = dets.iter().find(|o| (o.start, o.end, o.verb, o.noun) == (d.start, d.end, d.verb, d.noun)).unwrap();
            prop_assert!(d.score <= orig.score);
        }
        // The first emitted detection is the best input.
        let best = dets.iter().copied().min_by(rank_order).unwrap();
        prop_assert_eq!(out[0], best);
    }
}

//! Encoder, fusion, heads and losses: loop oracles for the forward pass,
//! attention symmetries and finite-difference checks of the assembled model.

use avtad_core::encoder::{
    encode, level_lengths, level_strides, positional_encoding, EncoderConfig, FeatureSequence, Modality,
};
use avtad_core::fusion::{
    attention_weights, cross_attention, cross_attention_with_positions, fuse_pyramids, CrossAttentionParams,
    FusionStrategy,
};
use avtad_core::heads::HeadConfig;
use avtad_core::labels::{assign_positives, GroundTruthSegment, LabelConfig, RegressionRanges};
use avtad_core::losses::LossWeights;
use avtad_core::model::{self, ModelConfig};
use avtad_core::numerics::gradcheck::finite_diff_check;
use avtad_core::numerics::{layer_norm, matmul, softmax_rows, LAYER_NORM_EPS};
use avtad_core::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn seq(rng: &mut ChaCha8Rng, m: Modality, t: usize, d: usize) -> FeatureSequence {
    FeatureSequence::new(m, 0.5, random(rng, &[t, d])).unwrap()
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap()
}

fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.at(i, j);
        }
    }
    Tensor::new(vec![n, m], out).unwrap()
}

fn scale(a: &Tensor, c: f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|x| x * c).collect()).unwrap()
}

fn pool2(a: &Tensor) -> Tensor {
    let (t, d) = (a.rows(), a.cols());
    let out_t = t.div_ceil(2);
    let mut out = vec![f64::NEG_INFINITY; out_t * d];
    for i in 0..t {
        for j in 0..d {
            let o = &mut out[(i / 2) * d + j];
            *o = o.max(a.at(i, j));
        }
    }
    Tensor::new(vec![out_t, d], out).unwrap()
}

/// softmax((q Wq)(k Wk)ᵀ/√d) (v Wv) with the public kernels.
fn attend(store: &ParamStore, prefix: &str, q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    let w = |n: &str| store.get(&format!("{prefix}.{n}")).unwrap().clone();
    let d = w("wq").rows() as f64;
    let qq = matmul(q, &w("wq")).unwrap();
    let kk = matmul(k, &w("wk")).unwrap();
    let vv = matmul(v, &w("wv")).unwrap();
    let a = softmax_rows(&scale(&matmul(&qq, &transpose(&kk)).unwrap(), 1.0 / d.sqrt())).unwrap();
    matmul(&a, &vv).unwrap()
}

fn encoder_oracle(store: &ParamStore, s: &FeatureSequence, cfg: &EncoderConfig) -> Vec<Tensor> {
    let prefix = s.modality.encoder_prefix();
    let proj = matmul(&s.features, store.get(&format!("{prefix}.proj")).unwrap()).unwrap();
    let mut x = Tensor::new(proj.shape().to_vec(), proj.data().iter().map(|v| v.max(0.0)).collect()).unwrap();
    let mut out = Vec::new();
    for l in 0..cfg.levels {
        if l > 0 {
            x = pool2(&x);
        }
        for b in 0..cfg.blocks_per_level {
            let p = format!("{prefix}.level{l}.block{b}");
            let n = layer_norm(
                &x,
                store.get(&format!("{p}.norm.gain")).unwrap(),
                store.get(&format!("{p}.norm.bias")).unwrap(),
                LAYER_NORM_EPS,
            )
            .unwrap();
            let qk = if cfg.positional {
                add(&n, &positional_encoding(n.rows(), n.cols()))
            } else {
                n.clone()
            };
            x = add(&x, &attend(store, &format!("{p}.attn"), &qk, &qk, &n));
        }
        out.push(x.clone());
    }
    out
}

fn enc_cfg(positional: bool) -> EncoderConfig {
    EncoderConfig {
        dim: 6,
        levels: 3,
        blocks_per_level: 2,
        max_input_len: 16,
        positional,
    }
}

#[test]
fn encoder_matches_composed_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for positional in [false, true] {
        let cfg = enc_cfg(positional);
        for t in [4, 7, 16] {
            let mut store = ParamStore::new(5);
            avtad_core::encoder::register_params(&mut store, "encoder.visual", 3, &cfg).unwrap();
            for (_, p) in store.iter_mut() {
                let r: Vec<f64> = (0..p.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
                p.data_mut().copy_from_slice(&r);
            }
            let s = seq(&mut rng, Modality::Visual, t, 3);
            let mut g = Graph::new();
            let pyr = encode(&mut g, &store, &s, &cfg).unwrap();
            let got = pyr.to_tensors(&g);
            let want = encoder_oracle(&store, &s, &cfg);
            assert_eq!(pyr.level_lengths(&g), level_lengths(t, 3));
            assert_eq!(pyr.level_strides, level_strides(0.5, 3));
            for (a, b) in got.iter().zip(&want) {
                let err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(err <= 1e-12, "max error {err}");
            }
        }
    }
}

#[test]
fn positional_encoding_values() {
    let pe = positional_encoding(5, 4);
    assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
    assert!((pe.at(3, 0) - 3.0f64.sin()).abs() < 1e-15);
    assert!((pe.at(3, 1) - 3.0f64.cos()).abs() < 1e-15);
    let w = 10_000f64.powf(-2.0 / 4.0);
    assert!((pe.at(2, 2) - (2.0 * w).sin()).abs() < 1e-15);
}

fn xattn_store(d: usize, seed: u64) -> ParamStore {
    let mut store = ParamStore::new(seed);
    CrossAttentionParams::register(&mut store, "x", d).unwrap();
    store
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let rows: Vec<&[f64]> = perm.iter().map(|&i| t.row(i)).collect();
    Tensor::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_rows_are_stochastic(seed in 0u64..10_000, tq in 1usize..6, tk in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = xattn_store(4, seed);
        let mut g = Graph::new();
        let p = CrossAttentionParams::bind(&mut g, &store, "x").unwrap();
        let q = g.input(random(&mut rng, &[tq, 4]));
        let k = g.input(random(&mut rng, &[tk, 4]));
        let a = attention_weights(&mut g, q, k, &p).unwrap();
        let w = g.value(a);
        for i in 0..tq {
            prop_assert!(w.row(i).iter().all(|v| *v >= 0.0));
            prop_assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn audio_order_is_irrelevant_without_positions(seed in 0u64..10_000, t in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = xattn_store(4, seed);
        let fv = random(&mut rng, &[t, 4]);
        let fa = random(&mut rng, &[t, 4]);
        let mut perm: Vec<usize> = (0..t).collect();
        perm.rotate_left(1);
        let run = |fa: Tensor| {
            let mut g = Graph::new();
            let p = CrossAttentionParams::bind(&mut g, &store, "x").unwrap();
            let v = g.input(fv.clone());
            let a = g.input(fa);
            let x = cross_attention(&mut g, v, a, &p).unwrap();
            g.value(x).clone()
        };
        let a = run(fa.clone());
        let b = run(permute_rows(&fa, &perm));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn self_attention_block_is_permutation_equivariant(seed in 0u64..10_000, t in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = EncoderConfig { dim: 4, levels: 1, blocks_per_level: 1, max_input_len: 8, positional: false };
        let mut store = ParamStore::new(seed);
        avtad_core::encoder::register_params(&mut store, "encoder.visual", 3, &cfg).unwrap();
        let x = random(&mut rng, &[t, 3]);
        let mut perm: Vec<usize> = (0..t).collect();
        perm.reverse();
        let run = |x: Tensor| {
            let mut g = Graph::new();
            let s = FeatureSequence::new(Modality::Visual, 1.0, x).unwrap();
            let pyr = encode(&mut g, &store, &s, &cfg).unwrap();
            g.value(pyr.levels[0]).clone()
        };
        let a = permute_rows(&run(x.clone()), &perm);
        let b = run(permute_rows(&x, &perm));
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn positions_make_attention_order_aware() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let store = xattn_store(4, 3);
    let fv = random(&mut rng, &[5, 4]);
    let fa = random(&mut rng, &[5, 4]);
    let run = |fa: Tensor| {
        let mut g = Graph::new();
        let p = CrossAttentionParams::bind(&mut g, &store, "x").unwrap();
        let v = g.input(fv.clone());
        let a = g.input(fa);
        let x = cross_attention_with_positions(&mut g, v, a, &p).unwrap();
        g.value(x).clone()
    };
    let perm = [4, 3, 2, 1, 0];
    assert_ne!(run(fa.clone()).data(), run(permute_rows(&fa, &perm)).data());
}

#[test]
fn fused_pyramid_starts_as_the_visual_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let cfg = tiny(FusionStrategy::FeatureFusionXattn, true);
    let store = model::init_params(&cfg, 4).unwrap();
    let v = seq(&mut rng, Modality::Visual, 8, 3);
    let a = seq(&mut rng, Modality::Audio, 8, 2);
    let mut g = Graph::new();
    let fv = encode(&mut g, &store, &v, &cfg.encoder).unwrap();
    let fa = encode(&mut g, &store, &a, &cfg.encoder).unwrap();
    let fused = fuse_pyramids(&mut g, &store, &fv, &fa, cfg.fusion, true, true).unwrap();
    assert_eq!(fused.to_tensors(&g), fv.to_tensors(&g));
}

fn tiny(fusion: FusionStrategy, audio: bool) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            dim: 4,
            levels: 2,
            blocks_per_level: 1,
            max_input_len: 8,
            positional: true,
        },
        heads: HeadConfig {
            hidden_channels: 3,
            kernel_width: 3,
            layers: 2,
            num_verbs: 2,
            num_nouns: 3,
        },
        visual_dim: 3,
        audio_dim: 2,
        visual_enabled: true,
        audio_enabled: audio,
        fusion,
        fusion_residual: true,
        centricity_enabled: true,
        boundary_enabled: true,
    }
}

#[test]
fn every_model_parameter_passes_finite_differences() {
    let segs = [
        GroundTruthSegment::new(0.4, 2.1, 1, 2).unwrap(),
        GroundTruthSegment::new(1.0, 3.6, 0, 1).unwrap(),
    ];
    let ranges = RegressionRanges::from_stride_units(&[(0.0, 4.0), (4.0, f64::INFINITY)], 0.5).unwrap();
    let targets = assign_positives(&segs, &[8, 4], &[0.5, 1.0], &ranges, 2, 3, &LabelConfig::default()).unwrap();
    let w = LossWeights::default();
    let layouts = [
        (FusionStrategy::FeatureFusionXattn, true),
        (FusionStrategy::FeatureFusionConcat, true),
        (FusionStrategy::ScoreFusionAdd, true),
        (FusionStrategy::ProposalFusion, true),
        (FusionStrategy::FeatureFusionXattn, false),
    ];
    for (i, (fusion, audio)) in layouts.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
        let cfg = tiny(fusion, audio);
        let mut store = model::init_params(&cfg, i as u64).unwrap();
        // Leave the zero initialisations: a random point avoids symmetric cases.
        for (_, p) in store.iter_mut() {
            let r: Vec<f64> = (0..p.numel()).map(|_| rng.random_range(-0.5..0.5)).collect();
            p.data_mut().copy_from_slice(&r);
        }
        let v = seq(&mut rng, Modality::Visual, 8, 3);
        let a = seq(&mut rng, Modality::Audio, 8, 2);
        let f = |s: &ParamStore, g: &mut Graph| {
            let fwd = model::forward(g, s, &cfg, &v, &a)?;
            Ok(model::loss(g, &fwd, &targets, 2, &w)?.0)
        };
        for name in store.names().map(str::to_owned).collect::<Vec<_>>() {
            let err = finite_diff_check(&f, &store, &name, 1e-5).unwrap();
            assert!(err < 1e-5, "{fusion} audio={audio} {name}: {err}");
        }
    }
}


#[test]
fn every_registered_parameter_is_trainable() {
    for fusion in FusionStrategy::ALL {
        for residual in [false, true] {
            let cfg = ModelConfig {
                fusion_residual: residual,
                ..tiny(fusion, true)
            };
            let store = model::init_params(&cfg, 0).unwrap();
            for (name, t) in store.iter() {
                assert!(t.requires_grad() && t.grad().is_some(), "{fusion}: {name}");
            }
        }
    }
}

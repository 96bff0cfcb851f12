//! Audio-visual fusion: cross-attention between pyramids, channel concatenation,
//! classification-score fusion and proposal-set concatenation.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::encoder::{with_positions, FeaturePyramid};
use crate::math;
use crate::numerics::{Graph, ParamStore, Var};
use crate::postprocess::ProposalSet;
use crate::{Error, Result};

/// How the audio stream is combined with the visual one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionStrategy {
    /// Separate visual and audio detectors; their proposal sets are concatenated.
    ProposalFusion,
    /// Visual boundaries with `p_v + p_a` class scores.
    ScoreFusionAdd,
    /// Visual boundaries with `p_v · p_a` class scores.
    ScoreFusionMul,
    /// Per-level channel concatenation and a learned projection back to `d`.
    FeatureFusionConcat,
    /// Per-level cross-attention with visual queries and audio keys/values.
    FeatureFusionXattn,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 5] = [
        FusionStrategy::ProposalFusion,
        FusionStrategy::ScoreFusionAdd,
        FusionStrategy::ScoreFusionMul,
        FusionStrategy::FeatureFusionConcat,
        FusionStrategy::FeatureFusionXattn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionStrategy::ProposalFusion => "proposal_fusion",
            FusionStrategy::ScoreFusionAdd => "score_fusion_add",
            FusionStrategy::ScoreFusionMul => "score_fusion_mul",
            FusionStrategy::FeatureFusionConcat => "feature_fusion_concat",
            FusionStrategy::FeatureFusionXattn => "feature_fusion_xattn",
        }
    }

    pub fn is_feature_fusion(self) -> bool {
        matches!(
            self,
            FusionStrategy::FeatureFusionConcat | FusionStrategy::FeatureFusionXattn
        )
    }

    pub fn score_mode(self) -> Option<ScoreFusion> {
        match self {
            FusionStrategy::ScoreFusionAdd => Some(ScoreFusion::Add),
            FusionStrategy::ScoreFusionMul => Some(ScoreFusion::Mul),
            _ => None,
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown fusion strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreFusion {
    Add,
    Mul,
}

/// Query, key and value projections (`d×d` each), bound to a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossAttentionParams {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

impl CrossAttentionParams {
    pub fn register(store: &mut ParamStore, prefix: &str, d: usize) -> Result<()> {
        for w in ["wq", "wk", "wv"] {
            store.init_uniform(&format!("{prefix}.{w}"), &[d, d], d)?;
        }
        Ok(())
    }

    pub fn bind(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<Self> {
        let p = Self {
            wq: g.param(store, &format!("{prefix}.wq"))?,
            wk: g.param(store, &format!("{prefix}.wk"))?,
            wv: g.param(store, &format!("{prefix}.wv"))?,
        };
        let d = g.value(p.wq).rows();
        for w in [p.wq, p.wk, p.wv] {
            if g.shape(w) != [d, d] {
                return Err(Error::Shape {
                    op: "cross_attention_params",
                    lhs: alloc::vec![d, d],
                    rhs: g.shape(w).to_vec(),
                });
            }
        }
        Ok(p)
    }
}

/// Row-stochastic weights `softmax(Q Kᵀ / √d)` with `Q = query·W_Q`, `K = kv·W_K`.
pub fn attention_weights(g: &mut Graph, query: Var, kv: Var, p: &CrossAttentionParams) -> Result<Var> {
    let d = g.value(p.wq).rows();
    let q = g.matmul(query, p.wq)?;
    let k = g.matmul(kv, p.wk)?;
    let scores = g.matmul_nt(q, k)?;
    let scaled = g.scale(scores, 1.0 / math::sqrt(d as f64));
    g.softmax_rows(scaled)
}

/// `softmax(Q Kᵀ / √d) · V` with `V = kv·W_V`. Rows are timesteps, so the
/// projections multiply from the right.
pub fn attention(g: &mut Graph, query: Var, kv: Var, p: &CrossAttentionParams) -> Result<Var> {
    attention_qkv(g, query, kv, kv, p)
}

/// Attention with separate key and value sources: `softmax(Q Kᵀ / √d) · V`,
/// `K = key·W_K`, `V = value·W_V`.
pub fn attention_qkv(g: &mut Graph, query: Var, key: Var, value: Var, p: &CrossAttentionParams) -> Result<Var> {
    let a = attention_weights(g, query, key, p)?;
    let v = g.matmul(value, p.wv)?;
    g.matmul(a, v)
}

/// Visual rows query the audio rows of the same level.
pub fn cross_attention(g: &mut Graph, fv: Var, fa: Var, p: &CrossAttentionParams) -> Result<Var> {
    let (tv, ta) = (g.value(fv).rows(), g.value(fa).rows());
    if tv != ta {
        return Err(Error::Alignment {
            visual: tv,
            audio: ta,
        });
    }
    let d = g.value(p.wq).rows();
    if g.value(fv).cols() != d || g.value(fa).cols() != d {
        return Err(Error::Shape {
            op: "cross_attention",
            lhs: g.shape(fv).to_vec(),
            rhs: g.shape(fa).to_vec(),
        });
    }
    attention(g, fv, fa, p)
}

/// [`cross_attention`] with timestep encodings added to the query and key
/// inputs only; values stay position-free.
pub fn cross_attention_with_positions(g: &mut Graph, fv: Var, fa: Var, p: &CrossAttentionParams) -> Result<Var> {
    let (tv, ta) = (g.value(fv).rows(), g.value(fa).rows());
    if tv != ta {
        return Err(Error::Alignment {
            visual: tv,
            audio: ta,
        });
    }
    let q = with_positions(g, fv)?;
    let k = with_positions(g, fa)?;
    attention_qkv(g, q, k, fa, p)
}

pub const XATTN_PREFIX: &str = "fusion.xattn";
pub const CONCAT_PROJ: &str = "fusion.concat.proj";

/// With a residual, the cross-attention value projection starts at zero so the
/// fused stream starts out equal to the visual one.
pub fn register_params(store: &mut ParamStore, strategy: FusionStrategy, d: usize, residual: bool) -> Result<()> {
    match strategy {
        FusionStrategy::FeatureFusionXattn => {
            CrossAttentionParams::register(store, XATTN_PREFIX, d)?;
            if residual {
                store.get_mut(&format!("{XATTN_PREFIX}.wv"))?.data_mut().fill(0.0);
            }
            Ok(())
        }
        FusionStrategy::FeatureFusionConcat => store.init_uniform(CONCAT_PROJ, &[2 * d, d], 2 * d),
        _ => Ok(()),
    }
}

/// Builds `F^av` level by level with parameters shared across levels.
///
/// Cross-attention adds `F^v` back as a residual when `residual` is set;
/// concatenation projects `[F^v ‖ F^a]` back to `d` channels.
pub fn fuse_pyramids(
    g: &mut Graph,
    store: &ParamStore,
    fv: &FeaturePyramid,
    fa: &FeaturePyramid,
    strategy: FusionStrategy,
    residual: bool,
    positional: bool,
) -> Result<FeaturePyramid> {
    if fv.num_levels() != fa.num_levels() {
        return Err(Error::contract(format!(
            "pyramids have {} and {} levels",
            fv.num_levels(),
            fa.num_levels()
        )));
    }
    let mut levels = Vec::with_capacity(fv.num_levels());
    match strategy {
        FusionStrategy::FeatureFusionXattn => {
            let p = CrossAttentionParams::bind(g, store, XATTN_PREFIX)?;
            for (&v, &a) in fv.levels.iter().zip(&fa.levels) {
                let x = if positional {
                    cross_attention_with_positions(g, v, a, &p)?
                } else {
                    cross_attention(g, v, a, &p)?
                };
                levels.push(if residual { g.add(v, x)? } else { x });
            }
        }
        FusionStrategy::FeatureFusionConcat => {
            let w = g.param(store, CONCAT_PROJ)?;
            for (&v, &a) in fv.levels.iter().zip(&fa.levels) {
                let (tv, ta) = (g.value(v).rows(), g.value(a).rows());
                if tv != ta {
                    return Err(Error::Alignment {
                        visual: tv,
                        audio: ta,
                    });
                }
                let cat = g.concat_cols(&[v, a])?;
                levels.push(g.matmul(cat, w)?);
            }
        }
        other => {
            return Err(Error::contract(format!(
                "`{other}` is not a feature-pyramid fusion strategy"
            )))
        }
    }
    Ok(FeaturePyramid {
        levels,
        level_strides: fv.level_strides.clone(),
    })
}

/// Element-wise `p_v + p_a` or `p_v · p_a`. Sums are left unnormalised (range
/// `[0, 2]`); they are only used for ranking.
pub fn fuse_classification_scores(pv: &[f64], pa: &[f64], mode: ScoreFusion) -> Result<Vec<f64>> {
    if pv.len() != pa.len() {
        return Err(Error::contract(format!(
            "score vectors have {} and {} classes",
            pv.len(),
            pa.len()
        )));
    }
    Ok(pv
        .iter()
        .zip(pa)
        .map(|(v, a)| match mode {
            ScoreFusion::Add => v + a,
            ScoreFusion::Mul => v * a,
        })
        .collect())
}

/// Multiset union of two proposal sets from the same video; no deduplication.
pub fn fuse_proposal_sets(visual: ProposalSet, audio: ProposalSet) -> Result<ProposalSet> {
    if visual.video_id != audio.video_id {
        return Err(Error::contract(format!(
            "cannot fuse proposals of `{}` with `{}`",
            visual.video_id, audio.video_id
        )));
    }
    let mut proposals = visual.proposals;
    proposals.extend(audio.proposals);
    Ok(ProposalSet {
        video_id: visual.video_id,
        proposals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use alloc::vec;

    #[test]
    fn strategy_names_round_trip() {
        for s in FusionStrategy::ALL {
            assert_eq!(s.as_str().parse::<FusionStrategy>().unwrap(), s);
        }
        assert!("feature_fusion".parse::<FusionStrategy>().is_err());
    }

    #[test]
    fn score_fusion_identities() {
        let pv = [0.2, 0.8];
        assert_eq!(fuse_classification_scores(&pv, &[0.0, 0.0], ScoreFusion::Add).unwrap(), pv);
        assert_eq!(fuse_classification_scores(&pv, &[1.0, 1.0], ScoreFusion::Mul).unwrap(), pv);
        let sum = fuse_classification_scores(&pv, &[0.5, 0.1], ScoreFusion::Add).unwrap();
        assert!((sum[0] - 0.7).abs() < 1e-15 && (sum[1] - 0.9).abs() < 1e-15);
        assert!(fuse_classification_scores(&pv, &[0.5], ScoreFusion::Add).is_err());
    }

    #[test]
    fn cross_attention_rejects_misalignment() {
        let mut store = ParamStore::new(0);
        CrossAttentionParams::register(&mut store, "x", 2).unwrap();
        let mut g = Graph::new();
        let p = CrossAttentionParams::bind(&mut g, &store, "x").unwrap();
        let fv = g.input(Tensor::zeros(&[3, 2]));
        let fa = g.input(Tensor::zeros(&[4, 2]));
        assert_eq!(
            cross_attention(&mut g, fv, fa, &p).unwrap_err(),
            Error::Alignment { visual: 3, audio: 4 }
        );
    }

    #[test]
    fn non_feature_strategy_rejected() {
        let store = ParamStore::new(0);
        let mut g = Graph::new();
        let v = g.input(Tensor::zeros(&[2, 2]));
        let pyr = FeaturePyramid {
            levels: vec![v],
            level_strides: vec![1.0],
        };
        let err = fuse_pyramids(&mut g, &store, &pyr, &pyr, FusionStrategy::ScoreFusionAdd, true, false)
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}

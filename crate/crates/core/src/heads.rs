//! Per-timestep prediction heads shared across pyramid levels.
//!
//! Every head is a trunk of `layers` blocks (conv1d → layer_norm → ReLU)
//! followed by a 1×1 output convolution with bias and a fixed activation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::encoder::FeaturePyramid;
use crate::math;
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConfig {
    pub hidden_channels: usize,
    /// Odd temporal kernel width of the trunk convolutions.
    pub kernel_width: usize,
    pub layers: usize,
    pub num_verbs: usize,
    pub num_nouns: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 32,
            kernel_width: 3,
            layers: 3,
            num_verbs: 4,
            num_nouns: 6,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_channels == 0 {
            return Err(Error::config("heads need ≥ 1 layer and ≥ 1 hidden channel"));
        }
        if self.kernel_width % 2 == 0 {
            return Err(Error::config(format!(
                "head kernel width must be odd, got {}",
                self.kernel_width
            )));
        }
        if self.num_verbs == 0 || self.num_nouns == 0 {
            return Err(Error::config("need ≥ 1 verb class and ≥ 1 noun class"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_verbs + self.num_nouns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// Sigmoid verb scores followed by sigmoid noun scores.
    Classification,
    /// Softplus start/end offsets in level-stride units.
    Regression,
    /// One sigmoid centricity score.
    Centricity,
    /// Sigmoid start and end boundary confidences.
    Boundary,
}

/// Output bias of the classification branch, `−ln((1 − π)/π)` with prior π = 0.01,
/// so that training starts from near-zero class probabilities.
pub const CLASS_PRIOR_BIAS: f64 = -4.595_119_850_134_589;

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Classification => "cls",
            HeadKind::Regression => "reg",
            HeadKind::Centricity => "ctr",
            HeadKind::Boundary => "bnd",
        }
    }

    pub fn out_channels(self, cfg: &HeadConfig) -> usize {
        match self {
            HeadKind::Classification => cfg.num_classes(),
            HeadKind::Regression | HeadKind::Boundary => 2,
            HeadKind::Centricity => 1,
        }
    }

    fn initial_bias(self) -> f64 {
        match self {
            HeadKind::Classification => CLASS_PRIOR_BIAS,
            _ => 0.0,
        }
    }

    fn activate(self, g: &mut Graph, x: Var) -> Var {
        match self {
            HeadKind::Regression => g.softplus(x),
            _ => g.sigmoid(x),
        }
    }
}

/// Parameter namespace of one head, e.g. `heads.main.cls`.
pub fn head_prefix(stream: &str, kind: HeadKind) -> String {
    format!("heads.{stream}.{}", kind.as_str())
}

pub fn register_head(
    store: &mut ParamStore,
    prefix: &str,
    kind: HeadKind,
    in_dim: usize,
    cfg: &HeadConfig,
) -> Result<()> {
    cfg.validate()?;
    let (k, h) = (cfg.kernel_width, cfg.hidden_channels);
    let mut c_in = in_dim;
    for i in 0..cfg.layers {
        store.init_uniform(&format!("{prefix}.conv{i}.kernel"), &[k, c_in, h], k * c_in)?;
        store.init_constant(&format!("{prefix}.conv{i}.norm.gain"), &[h], 1.0)?;
        store.init_constant(&format!("{prefix}.conv{i}.norm.bias"), &[h], 0.0)?;
        c_in = h;
    }
    let out = kind.out_channels(cfg);
    store.init_uniform(&format!("{prefix}.out.kernel"), &[1, h, out], h)?;
    store.init_constant(&format!("{prefix}.out.bias"), &[out], kind.initial_bias())?;
    Ok(())
}

struct BoundHead {
    trunk: Vec<(Var, Var, Var)>,
    out_kernel: Var,
    out_bias: Var,
}

fn bind(g: &mut Graph, store: &ParamStore, prefix: &str, cfg: &HeadConfig) -> Result<BoundHead> {
    let mut trunk = Vec::with_capacity(cfg.layers);
    for i in 0..cfg.layers {
        trunk.push((
            g.param(store, &format!("{prefix}.conv{i}.kernel"))?,
            g.param(store, &format!("{prefix}.conv{i}.norm.gain"))?,
            g.param(store, &format!("{prefix}.conv{i}.norm.bias"))?,
        ));
    }
    Ok(BoundHead {
        trunk,
        out_kernel: g.param(store, &format!("{prefix}.out.kernel"))?,
        out_bias: g.param(store, &format!("{prefix}.out.bias"))?,
    })
}

fn forward_level(g: &mut Graph, head: &BoundHead, kind: HeadKind, x: Var) -> Result<Var> {
    let mut h = x;
    for &(kernel, gain, bias) in &head.trunk {
        let c = g.conv1d(h, kernel)?;
        let n = g.layer_norm(c, gain, bias)?;
        h = g.relu(n);
    }
    let o = g.conv1d(h, head.out_kernel)?;
    let o = g.add_row(o, head.out_bias)?;
    Ok(kind.activate(g, o))
}

/// Runs one head over every pyramid level with shared weights; level ℓ yields a
/// `T_ℓ × out_channels` node.
pub fn apply_head(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    kind: HeadKind,
    pyramid: &FeaturePyramid,
    cfg: &HeadConfig,
) -> Result<Vec<Var>> {
    let head = bind(g, store, prefix, cfg)?;
    pyramid
        .levels
        .iter()
        .map(|&x| forward_level(g, &head, kind, x))
        .collect()
}

pub fn classification_head(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    pyramid: &FeaturePyramid,
    cfg: &HeadConfig,
) -> Result<Vec<Var>> {
    apply_head(g, store, prefix, HeadKind::Classification, pyramid, cfg)
}

pub fn regression_head(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    pyramid: &FeaturePyramid,
    cfg: &HeadConfig,
) -> Result<Vec<Var>> {
    apply_head(g, store, prefix, HeadKind::Regression, pyramid, cfg)
}

pub fn centricity_head(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    pyramid: &FeaturePyramid,
    cfg: &HeadConfig,
) -> Result<Vec<Var>> {
    apply_head(g, store, prefix, HeadKind::Centricity, pyramid, cfg)
}

/// Start/end boundary confidences. Only available when the head is enabled
/// (boundary-refining baseline mode).
pub fn boundary_confidence_head(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    pyramid: &FeaturePyramid,
    cfg: &HeadConfig,
    enabled: bool,
) -> Result<Vec<Var>> {
    if !enabled {
        return Err(Error::contract(
            "boundary confidences queried while the boundary head is disabled",
        ));
    }
    apply_head(g, store, prefix, HeadKind::Boundary, pyramid, cfg)
}

/// Detached outputs of one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelOutputs {
    /// Seconds per timestep.
    pub stride: f64,
    /// `T_ℓ × C_verb`, row-major.
    pub verb: Vec<f64>,
    /// `T_ℓ × C_noun`, row-major.
    pub noun: Vec<f64>,
    /// `(o^s, o^e)` per timestep, in level-stride units.
    pub offsets: Vec<(f64, f64)>,
    /// `None` when the centricity head is disabled.
    pub centricity: Option<Vec<f64>>,
    /// `(p^s, p^e)` per timestep; `None` when the boundary head is disabled.
    pub boundary: Option<Vec<(f64, f64)>>,
    /// Audio-stream verb and noun scores (`p_a`), when an audio classifier runs.
    pub audio_verb: Option<Vec<f64>>,
    pub audio_noun: Option<Vec<f64>>,
}

impl LevelOutputs {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// All head outputs of one detector stream for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub num_verbs: usize,
    pub num_nouns: usize,
    pub levels: Vec<LevelOutputs>,
}

/// Splits a `T × (C_v + C_n)` classification tensor into verb and noun blocks.
pub fn split_class_scores(t: &Tensor, num_verbs: usize) -> (Vec<f64>, Vec<f64>) {
    let c = t.cols();
    let mut verb = Vec::with_capacity(t.rows() * num_verbs);
    let mut noun = Vec::with_capacity(t.rows() * (c - num_verbs));
    for r in 0..t.rows() {
        let row = t.row(r);
        verb.extend_from_slice(&row[..num_verbs]);
        noun.extend_from_slice(&row[num_verbs..]);
    }
    (verb, noun)
}

pub(crate) fn pairs(t: &Tensor) -> Vec<(f64, f64)> {
    t.data().chunks(2).map(|c| (c[0], c[1])).collect()
}

/// `softplus(0) = ln 2`, the offset produced by a zero pre-activation.
pub fn zero_offset() -> f64 {
    math::softplus(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pyramid(g: &mut Graph, lens: &[usize], d: usize) -> FeaturePyramid {
        let levels = lens
            .iter()
            .map(|&t| {
                let data = (0..t * d).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
                g.input(Tensor::new(vec![t, d], data).unwrap())
            })
            .collect();
        FeaturePyramid {
            levels,
            level_strides: vec![1.0, 2.0][..lens.len()].to_vec(),
        }
    }

    fn cfg() -> HeadConfig {
        HeadConfig {
            hidden_channels: 5,
            kernel_width: 3,
            layers: 3,
            num_verbs: 2,
            num_nouns: 3,
        }
    }

    #[test]
    fn shapes_per_level() {
        let c = cfg();
        let mut store = ParamStore::new(1);
        register_head(&mut store, "h", HeadKind::Classification, 4, &c).unwrap();
        let mut g = Graph::new();
        let p = pyramid(&mut g, &[6, 3], 4);
        let out = classification_head(&mut g, &store, "h", &p, &c).unwrap();
        assert_eq!(g.shape(out[0]), &[6, 5]);
        assert_eq!(g.shape(out[1]), &[3, 5]);
    }

    #[test]
    fn zero_output_layer_gives_half_and_ln2() {
        let c = cfg();
        let mut store = ParamStore::new(1);
        register_head(&mut store, "c", HeadKind::Classification, 4, &c).unwrap();
        register_head(&mut store, "r", HeadKind::Regression, 4, &c).unwrap();
        for name in ["c.out.kernel", "c.out.bias", "r.out.kernel"] {
            store.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let p = pyramid(&mut g, &[4], 4);
        let cls = classification_head(&mut g, &store, "c", &p, &c).unwrap();
        let reg = regression_head(&mut g, &store, "r", &p, &c).unwrap();
        assert!(g.value(cls[0]).data().iter().all(|v| *v == 0.5));
        assert!(g
            .value(reg[0])
            .data()
            .iter()
            .all(|v| (v - core::f64::consts::LN_2).abs() < 1e-15));
    }

    #[test]
    fn boundary_head_disabled_is_an_error() {
        let c = cfg();
        let store = ParamStore::new(1);
        let mut g = Graph::new();
        let p = pyramid(&mut g, &[4], 4);
        let err = boundary_confidence_head(&mut g, &store, "b", &p, &c, false).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn even_kernel_rejected() {
        let c = HeadConfig {
            kernel_width: 2,
            ..cfg()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn prior_bias_value() {
        let expected = -math::ln((1.0 - 0.01) / 0.01);
        assert!((CLASS_PRIOR_BIAS - expected).abs() < 1e-14);
    }
}

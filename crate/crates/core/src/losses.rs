//! Loss terms and their weighted total.

use alloc::format;
use alloc::vec::Vec;

use crate::labels::TrainingTargets;
use crate::numerics::{FocalParams, Graph, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub verb_weight: f64,
    pub noun_weight: f64,
    pub focal: FocalParams,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.5,
            lambda3: 1.7,
            verb_weight: 2.0,
            noun_weight: 3.0,
            focal: FocalParams::default(),
        }
    }
}

impl LossWeights {
    /// λ2 and λ3 after switching off the boundary and centricity terms.
    pub fn effective(&self, boundary_enabled: bool, centricity_enabled: bool) -> Self {
        Self {
            lambda2: if boundary_enabled { self.lambda2 } else { 0.0 },
            lambda3: if centricity_enabled { self.lambda3 } else { 0.0 },
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.verb_weight,
            self.noun_weight,
        ];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("loss weights must be finite and ≥ 0"));
        }
        if self.verb_weight + self.noun_weight <= 0.0 {
            return Err(Error::config("verb and noun weights cannot both be 0"));
        }
        if !(0.0..=1.0).contains(&self.focal.alpha) || self.focal.gamma < 0.0 {
            return Err(Error::config("focal alpha must lie in [0, 1] and gamma ≥ 0"));
        }
        Ok(())
    }
}

/// Focal loss over `scores: T′ × (C_v + C_n)`, summed over classes and averaged
/// over timesteps, then mixed as `(w_v · verb + w_n · noun) / (w_v + w_n)`.
pub fn focal_classification_loss(
    g: &mut Graph,
    scores: Var,
    targets: &[f64],
    num_verbs: usize,
    w: &LossWeights,
) -> Result<Var> {
    let (t, c) = match g.shape(scores) {
        [t, c] => (*t, *c),
        s => {
            return Err(Error::contract(format!(
                "class scores must be a matrix, got {s:?}"
            )))
        }
    };
    if targets.len() != t * c || num_verbs == 0 || num_verbs >= c {
        return Err(Error::contract(format!(
            "class targets of length {} for {t}×{c} scores with {num_verbs} verbs",
            targets.len()
        )));
    }
    let (vt, nt) = split_columns(targets, c, num_verbs);
    let norm = t.max(1) as f64;
    let pv = g.slice_cols(scores, 0, num_verbs)?;
    let pn = g.slice_cols(scores, num_verbs, c)?;
    let lv = g.focal_loss(pv, &vt, w.focal, norm)?;
    let ln = g.focal_loss(pn, &nt, w.focal, norm)?;
    let z = w.verb_weight + w.noun_weight;
    g.weighted_sum(&[(lv, w.verb_weight / z), (ln, w.noun_weight / z)])
}

fn split_columns(x: &[f64], c: usize, split: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(x.len() / c * split);
    let mut b = Vec::with_capacity(x.len() / c * (c - split));
    for row in x.chunks(c) {
        a.extend_from_slice(&row[..split]);
        b.extend_from_slice(&row[split..]);
    }
    (a, b)
}

/// Mean `1 − tIoU` over positive timesteps. Positives whose target segment has
/// zero length are skipped; their count is returned alongside the loss.
pub fn iou_regression_loss(
    g: &mut Graph,
    pred: Var,
    targets: &[Option<(f64, f64)>],
) -> Result<(Var, usize)> {
    let mut rows = Vec::new();
    let mut tg = Vec::new();
    let mut excluded = 0;
    for (i, t) in targets.iter().enumerate() {
        if let Some((a, b)) = *t {
            if a + b > 0.0 {
                rows.push(i);
                tg.push((a, b));
            } else {
                excluded += 1;
            }
        }
    }
    Ok((g.iou_loss(pred, &tg, &rows)?, excluded))
}

/// `(1/T′) Σ (label − pred)²` over every timestep of every level.
pub fn centricity_mse_loss(g: &mut Graph, pred: Var, labels: &[f64]) -> Result<Var> {
    if g.value(pred).numel() != labels.len() {
        return Err(Error::contract(format!(
            "{} centricity predictions for {} labels",
            g.value(pred).numel(),
            labels.len()
        )));
    }
    g.mse_loss(pred, labels)
}

/// MSE between predicted `(p^s, p^e)` rows and their labels.
pub fn boundary_loss(g: &mut Graph, pred: Var, labels: &[(f64, f64)]) -> Result<Var> {
    let flat: Vec<f64> = labels.iter().flat_map(|&(s, e)| [s, e]).collect();
    if g.value(pred).numel() != flat.len() {
        return Err(Error::contract(format!(
            "{} boundary predictions for {} labels",
            g.value(pred).numel(),
            flat.len()
        )));
    }
    g.mse_loss(pred, &flat)
}

/// `L_g + λ1·L_c + λ2·L_b + λ3·L_C` on plain numbers.
pub fn total_loss(
    l_g: f64,
    l_c: f64,
    l_b: f64,
    l_ctr: f64,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
) -> Result<f64> {
    for (name, v) in [("L_g", l_g), ("L_c", l_c), ("L_b", l_b), ("L_C", l_ctr)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::contract(format!("loss component {name} = {v}")));
        }
    }
    Ok(l_g + lambda1 * l_c + lambda2 * l_b + lambda3 * l_ctr)
}

/// Loss component values of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub regression: f64,
    pub classification: f64,
    pub boundary: f64,
    pub centricity: f64,
    pub total: f64,
    pub excluded_targets: usize,
}

/// Graph nodes of one detector stream's loss terms; disabled terms are `None`.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub regression: Var,
    pub classification: Var,
    pub boundary: Option<Var>,
    pub centricity: Option<Var>,
    pub excluded_targets: usize,
}

/// Per-head predictions of one stream, already concatenated over levels.
#[derive(Debug, Clone, Copy)]
pub struct StreamPredictions {
    pub classes: Var,
    pub offsets: Var,
    pub centricity: Option<Var>,
    pub boundary: Option<Var>,
}

pub fn stream_losses(
    g: &mut Graph,
    pred: &StreamPredictions,
    targets: &TrainingTargets,
    num_verbs: usize,
    w: &LossWeights,
) -> Result<LossTerms> {
    let classification = focal_classification_loss(g, pred.classes, &targets.classes, num_verbs, w)?;
    let (regression, excluded_targets) = iou_regression_loss(g, pred.offsets, &targets.offsets)?;
    let centricity = pred
        .centricity
        .map(|p| centricity_mse_loss(g, p, &targets.centricity))
        .transpose()?;
    let boundary = pred
        .boundary
        .map(|p| boundary_loss(g, p, &targets.boundary))
        .transpose()?;
    Ok(LossTerms {
        regression,
        classification,
        boundary,
        centricity,
        excluded_targets,
    })
}

/// Weighted total as a graph node, plus its component values.
pub fn combine(g: &mut Graph, terms: &LossTerms, extra_classification: &[Var], w: &LossWeights) -> Result<(Var, LossBreakdown)> {
    let mut parts = alloc::vec![(terms.regression, 1.0), (terms.classification, w.lambda1)];
    let mut cls = g.scalar(terms.classification);
    for &v in extra_classification {
        parts.push((v, w.lambda1));
        cls += g.scalar(v);
    }
    let mut b = LossBreakdown {
        regression: g.scalar(terms.regression),
        classification: cls,
        excluded_targets: terms.excluded_targets,
        ..Default::default()
    };
    if let Some(v) = terms.boundary {
        parts.push((v, w.lambda2));
        b.boundary = g.scalar(v);
    }
    if let Some(v) = terms.centricity {
        parts.push((v, w.lambda3));
        b.centricity = g.scalar(v);
    }
    let total = g.weighted_sum(&parts)?;
    b.total = g.scalar(total);
    Ok((total, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use alloc::vec;

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 1.7).unwrap(), 0.0);
        let v = total_loss(1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 1.7).unwrap();
        assert!((v - 4.2).abs() < 1e-12);
        assert!(total_loss(-1.0, 0.0, 0.0, 0.0, 1.0, 0.5, 1.7).is_err());
        let w = LossWeights::default().effective(false, false);
        assert_eq!(
            total_loss(1.0, 1.0, 1.0, 5.0, w.lambda1, w.lambda2, w.lambda3).unwrap(),
            total_loss(1.0, 1.0, 1.0, 0.0, w.lambda1, w.lambda2, w.lambda3).unwrap()
        );
    }

    #[test]
    fn iou_loss_half_overlap() {
        let mut g = Graph::new();
        let p = g.input(Tensor::from_rows(&[&[1.0, 1.0], &[3.0, 3.0]]).unwrap());
        let (l, ex) = iou_regression_loss(&mut g, p, &[Some((2.0, 2.0)), None]).unwrap();
        assert_eq!(ex, 0);
        assert!((g.scalar(l) - 0.5).abs() < 1e-15);
        let (_, ex) = iou_regression_loss(&mut g, p, &[Some((0.0, 0.0)), None]).unwrap();
        assert_eq!(ex, 1);
    }

    #[test]
    fn mse_cases() {
        let mut g = Graph::new();
        let p = g.input(Tensor::new(vec![4, 1], vec![0.0; 4]).unwrap());
        let l = centricity_mse_loss(&mut g, p, &[1.0; 4]).unwrap();
        assert_eq!(g.scalar(l), 1.0);
        assert!(centricity_mse_loss(&mut g, p, &[1.0; 3]).is_err());
    }

    #[test]
    fn focal_single_element() {
        // One timestep, one verb (positive, p = 0.8), one noun (negative, p = 0.3).
        let mut g = Graph::new();
        let p = g.input(Tensor::from_rows(&[&[0.8, 0.3]]).unwrap());
        let w = LossWeights::default();
        let l = focal_classification_loss(&mut g, p, &[1.0, 0.0], 1, &w).unwrap();
        let verb = -0.25 * 0.2f64.powi(2) * 0.8f64.ln();
        let noun = -0.75 * 0.3f64.powi(2) * 0.7f64.ln();
        let expected = (2.0 * verb + 3.0 * noun) / 5.0;
        assert!((g.scalar(l) - expected).abs() < 1e-15);
    }

    #[test]
    fn focal_degenerates_to_half_bce() {
        let mut g = Graph::new();
        let p = g.input(Tensor::from_rows(&[&[0.6, 0.4]]).unwrap());
        let w = LossWeights {
            focal: FocalParams {
                alpha: 0.5,
                gamma: 0.0,
            },
            verb_weight: 1.0,
            noun_weight: 1.0,
            ..Default::default()
        };
        let l = focal_classification_loss(&mut g, p, &[1.0, 1.0], 1, &w).unwrap();
        let bce = (-(0.6f64.ln()) - 0.4f64.ln()) / 2.0;
        assert!((g.scalar(l) - 0.5 * bce).abs() < 1e-15);
    }
}

//! Ground-truth segments and per-timestep training targets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// One annotated action, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthSegment {
    pub start: f64,
    pub end: f64,
    pub verb: usize,
    pub noun: usize,
}

impl GroundTruthSegment {
    pub fn new(start: f64, end: f64, verb: usize, noun: usize) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::contract(format!(
                "segment needs finite start < end, got [{start}, {end}]"
            )));
        }
        Ok(Self {
            start,
            end,
            verb,
            noun,
        })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn centre(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn half_length(&self) -> f64 {
        0.5 * (self.end - self.start)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.start <= x && x <= self.end
    }
}

/// What the centre distance is divided by before the Gaussian is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CentreNormalizer {
    /// Half the segment length: labels are duration-invariant, `d ∈ [0, 1]` inside.
    #[default]
    HalfLength,
    /// The stride of the level the timestep lives on.
    LevelStride,
}

/// `|x − centre| / (half-length)`; 0 at the centre, 1 at either boundary.
pub fn relative_distance(x: f64, seg: &GroundTruthSegment) -> f64 {
    (x - seg.centre()).abs() / seg.half_length()
}

fn gaussian(d: f64, sigma: f64) -> f64 {
    math::exp(-d * d / (2.0 * sigma * sigma))
}

/// `exp(−d²/(2σ²))` with `d` the half-length-normalised distance to the centre.
pub fn centricity_label(x: f64, seg: &GroundTruthSegment, sigma: f64) -> Result<f64> {
    centricity_label_with(x, seg, sigma, CentreNormalizer::HalfLength, 1.0)
}

pub fn centricity_label_with(
    x: f64,
    seg: &GroundTruthSegment,
    sigma: f64,
    normalizer: CentreNormalizer,
    level_stride: f64,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::contract(format!("sigma must be positive, got {sigma}")));
    }
    if !seg.contains(x) {
        return Err(Error::contract(format!(
            "timestep at {x} s lies outside [{}, {}]",
            seg.start, seg.end
        )));
    }
    let d = match normalizer {
        CentreNormalizer::HalfLength => relative_distance(x, seg),
        CentreNormalizer::LevelStride => (x - seg.centre()).abs() / level_stride,
    };
    Ok(gaussian(d, sigma))
}

/// Distances from `x` to the segment boundaries, in units of `level_stride`.
pub fn regression_targets(x: f64, seg: &GroundTruthSegment, level_stride: f64) -> (f64, f64) {
    ((x - seg.start) / level_stride, (seg.end - x) / level_stride)
}

/// Start and end confidence labels at `x`: the centricity Gaussian recentred on
/// each boundary (same σ and half-length normaliser), maximised over segments.
pub fn boundary_labels(x: f64, segments: &[GroundTruthSegment], sigma: f64) -> (f64, f64) {
    segments.iter().fold((0.0, 0.0), |(ps, pe), seg| {
        let h = seg.half_length();
        (
            ps.max(gaussian((x - seg.start).abs() / h, sigma)),
            pe.max(gaussian((x - seg.end).abs() / h, sigma)),
        )
    })
}

/// Inclusive `[lo, hi]` bounds, in seconds, on `max(x − s, e − x)` for each level.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionRanges(pub Vec<(f64, f64)>);

impl RegressionRanges {
    /// Scales bounds given in units of the base stride into seconds.
    pub fn from_stride_units(bounds: &[(f64, f64)], base_stride: f64) -> Result<Self> {
        let r = Self(
            bounds
                .iter()
                .map(|&(lo, hi)| (lo * base_stride, hi * base_stride))
                .collect(),
        );
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &(lo, hi)) in self.0.iter().enumerate() {
            if !(lo >= 0.0 && lo < hi) {
                return Err(Error::config(format!("regression range {i} is [{lo}, {hi}]")));
            }
            if i > 0 {
                let (plo, phi) = self.0[i - 1];
                if !(lo > plo && hi > phi) {
                    return Err(Error::config("regression ranges must be strictly increasing"));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelConfig {
    pub sigma: f64,
    pub normalizer: CentreNormalizer,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            sigma: 1.7,
            normalizer: CentreNormalizer::HalfLength,
        }
    }
}

/// Targets for every timestep of every level, concatenated level by level
/// (`T′ = Σ T_ℓ` entries).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTargets {
    pub level_lengths: Vec<usize>,
    pub level_strides: Vec<f64>,
    pub matched: Vec<Option<usize>>,
    pub centricity: Vec<f64>,
    /// In level-stride units; `None` on negatives.
    pub offsets: Vec<Option<(f64, f64)>>,
    /// `T′ × (C_verb + C_noun)` one-hot rows of the matched segment.
    pub classes: Vec<f64>,
    pub boundary: Vec<(f64, f64)>,
}

impl TrainingTargets {
    pub fn len(&self) -> usize {
        self.matched.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matched.is_empty()
    }

    pub fn num_positives(&self) -> usize {
        self.matched.iter().filter(|m| m.is_some()).count()
    }

    /// Level and in-level timestep of flat index `i`.
    pub fn locate(&self, mut i: usize) -> (usize, usize) {
        for (l, &len) in self.level_lengths.iter().enumerate() {
            if i < len {
                return (l, i);
            }
            i -= len;
        }
        panic!("flat index out of range")
    }
}

/// Index of the segment that timestep `x` on a level with range `(lo, hi)`
/// regresses, if any: covering segments whose larger offset is in range, the
/// shortest first, then the earliest start, then the lowest index.
pub fn match_timestep(x: f64, range: (f64, f64), segments: &[GroundTruthSegment]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, seg) in segments.iter().enumerate() {
        if !seg.contains(x) {
            continue;
        }
        let m = (x - seg.start).max(seg.end - x);
        if m < range.0 || m > range.1 {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(j) => {
                let cur = &segments[j];
                let better = seg.duration() < cur.duration()
                    || (seg.duration() == cur.duration() && seg.start < cur.start);
                Some(if better { i } else { j })
            }
        };
    }
    best
}

/// Assigns every timestep (at `x = t · stride_ℓ`) to at most one segment and
/// fills the centricity, offset, class and boundary targets.
pub fn assign_positives(
    segments: &[GroundTruthSegment],
    level_lengths: &[usize],
    level_strides: &[f64],
    ranges: &RegressionRanges,
    num_verbs: usize,
    num_nouns: usize,
    cfg: &LabelConfig,
) -> Result<TrainingTargets> {
    if level_lengths.len() != level_strides.len() || level_lengths.len() != ranges.len() {
        return Err(Error::contract(format!(
            "{} levels but {} strides and {} regression ranges",
            level_lengths.len(),
            level_strides.len(),
            ranges.len()
        )));
    }
    for s in segments {
        if s.verb >= num_verbs || s.noun >= num_nouns {
            return Err(Error::contract(format!(
                "segment class ({}, {}) outside {num_verbs} verbs × {num_nouns} nouns",
                s.verb, s.noun
            )));
        }
    }
    let total: usize = level_lengths.iter().sum();
    let c = num_verbs + num_nouns;
    let mut out = TrainingTargets {
        level_lengths: level_lengths.to_vec(),
        level_strides: level_strides.to_vec(),
        matched: Vec::with_capacity(total),
        centricity: Vec::with_capacity(total),
        offsets: Vec::with_capacity(total),
        classes: vec![0.0; total * c],
        boundary: Vec::with_capacity(total),
    };
    let mut row = 0;
    for (l, (&len, &stride)) in level_lengths.iter().zip(level_strides).enumerate() {
        for t in 0..len {
            let x = t as f64 * stride;
            let m = match_timestep(x, ranges.0[l], segments);
            out.matched.push(m);
            match m {
                Some(i) => {
                    let seg = &segments[i];
                    out.centricity
                        .push(centricity_label_with(x, seg, cfg.sigma, cfg.normalizer, stride)?);
                    out.offsets.push(Some(regression_targets(x, seg, stride)));
                    out.classes[row * c + seg.verb] = 1.0;
                    out.classes[row * c + num_verbs + seg.noun] = 1.0;
                }
                None => {
                    out.centricity.push(0.0);
                    out.offsets.push(None);
                }
            }
            out.boundary.push(boundary_labels(x, segments, cfg.sigma));
            row += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(s: f64, e: f64) -> GroundTruthSegment {
        GroundTruthSegment::new(s, e, 0, 0).unwrap()
    }

    #[test]
    fn label_at_centre_and_boundary() {
        let g = seg(2.0, 6.0);
        assert_eq!(centricity_label(4.0, &g, 1.7).unwrap(), 1.0);
        let b = centricity_label(2.0, &g, 1.7).unwrap();
        assert!((b - 0.841_128_883_357_608_4).abs() < 1e-12);
        assert!(centricity_label(6.5, &g, 1.7).is_err());
    }

    #[test]
    fn regression_target_cases() {
        let g = seg(2.0, 6.0);
        assert_eq!(regression_targets(4.0, &g, 1.0), (2.0, 2.0));
        assert_eq!(regression_targets(2.0, &g, 0.5), (0.0, 8.0));
    }

    #[test]
    fn single_segment_assignment() {
        let ranges = RegressionRanges(vec![(0.0, 4.0)]);
        let t = assign_positives(&[seg(2.0, 6.0)], &[10], &[1.0], &ranges, 1, 1, &LabelConfig::default())
            .unwrap();
        let pos: Vec<usize> = (0..10).filter(|&i| t.matched[i].is_some()).collect();
        assert_eq!(pos, vec![2, 3, 4, 5, 6]);
        assert_eq!(t.centricity[4], 1.0);
        assert_eq!(t.centricity[0], 0.0);
        assert_eq!(t.classes[4 * 2], 1.0);
        assert_eq!(t.classes[4 * 2 + 1], 1.0);
    }

    #[test]
    fn nested_segments_prefer_shorter() {
        let segs = [seg(0.0, 10.0), seg(4.0, 6.0)];
        assert_eq!(match_timestep(5.0, (0.0, 100.0), &segs), Some(1));
        let twins = [seg(3.0, 5.0), seg(2.0, 4.0)];
        assert_eq!(match_timestep(3.5, (0.0, 100.0), &twins), Some(1));
    }

    #[test]
    fn ranges_must_increase() {
        assert!(RegressionRanges(vec![(0.0, 4.0), (4.0, 8.0)]).validate().is_ok());
        assert!(RegressionRanges(vec![(0.0, 8.0), (0.0, 4.0)]).validate().is_err());
        let r = RegressionRanges::from_stride_units(&[(0.0, 4.0), (4.0, f64::INFINITY)], 0.5).unwrap();
        assert_eq!(r.0[0], (0.0, 2.0));
    }

    #[test]
    fn boundary_label_peaks_at_boundaries() {
        let segs = [seg(2.0, 6.0)];
        assert_eq!(boundary_labels(2.0, &segs, 1.7).0, 1.0);
        assert_eq!(boundary_labels(6.0, &segs, 1.7).1, 1.0);
        assert!(boundary_labels(4.0, &segs, 1.7).0 < 1.0);
        assert_eq!(boundary_labels(4.0, &[], 1.7), (0.0, 0.0));
    }
}

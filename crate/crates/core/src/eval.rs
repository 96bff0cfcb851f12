//! tIoU, average precision, mAP tables and the centre-distance diagnostics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::labels::{relative_distance, GroundTruthSegment, TrainingTargets};
use crate::postprocess::{rank_order, Detection, Proposal, ScoreWeights, Task, TaskResults};
use crate::{Error, Result};

/// Intersection over union of two intervals; assumes both are non-degenerate.
pub fn tiou_unchecked(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

pub fn tiou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    for s in [a, b] {
        if !(s.0 < s.1) {
            return Err(Error::contract(format!(
                "degenerate segment [{}, {}]",
                s.0, s.1
            )));
        }
    }
    Ok(tiou_unchecked(a, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub tiou_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tiou_thresholds: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.tiou_thresholds;
        if t.is_empty()
            || t.iter().any(|v| !(*v > 0.0 && *v <= 1.0))
            || t.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::config(
                "tIoU thresholds must be non-empty, strictly increasing and in (0, 1]",
            ));
        }
        Ok(())
    }
}

/// A scored segment tagged with the video it belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSegment {
    pub video: usize,
    pub start: f64,
    pub end: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtSegment {
    pub video: usize,
    pub start: f64,
    pub end: f64,
}

/// All-points average precision of one class.
///
/// `detections` must be sorted best first. Each detection, in order, claims the
/// unmatched same-video ground truth with the highest tIoU (ties to the lower
/// index) if that tIoU reaches `threshold`. AP is the sum of the precision at
/// each true positive divided by the number of ground truths; `None` when there
/// are no ground truths.
pub fn average_precision(detections: &[ScoredSegment], gts: &[GtSegment], threshold: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let mut by_video: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_video.entry(g.video).or_default().push(i);
    }
    let mut used = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (k, d) in detections.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for &gi in by_video.get(&d.video).map(Vec::as_slice).unwrap_or(&[]) {
            if used[gi] {
                continue;
            }
            let iou = tiou_unchecked((d.start, d.end), (gts[gi].start, gts[gi].end));
            if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            used[gi] = true;
            tp += 1;
            sum += tp as f64 / (k + 1) as f64;
        }
    }
    Some(sum / gts.len() as f64)
}

/// mAP per (task, threshold) plus the per-task mean over thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTable {
    pub thresholds: Vec<f64>,
    /// `values[task][threshold index]`, tasks in `Task::ALL` order.
    pub values: Vec<Vec<f64>>,
    /// Classes skipped per task for lack of ground truth among predicted classes.
    pub classes_without_gt: Vec<usize>,
}

impl MapTable {
    pub fn get(&self, task: Task, threshold_index: usize) -> f64 {
        self.values[task_index(task)][threshold_index]
    }

    pub fn average(&self, task: Task) -> f64 {
        let row = &self.values[task_index(task)];
        row.iter().sum::<f64>() / row.len() as f64
    }

    /// `(task, threshold, mAP)` rows, tasks in order, thresholds ascending.
    pub fn rows(&self) -> Vec<(Task, f64, f64)> {
        let mut out = Vec::new();
        for task in Task::ALL {
            for (i, &t) in self.thresholds.iter().enumerate() {
                out.push((task, t, self.get(task, i)));
            }
        }
        out
    }
}

fn task_index(task: Task) -> usize {
    match task {
        Task::Verb => 0,
        Task::Noun => 1,
        Task::Action => 2,
    }
}

/// Applies `f` to every detection score of every task.
pub fn map_scores(results: &[TaskResults], f: impl Fn(f64) -> f64) -> Vec<TaskResults> {
    results
        .iter()
        .map(|r| {
            let mut r = r.clone();
            for task in Task::ALL {
                r.get_mut(task).detections.iter_mut().for_each(|d| d.score = f(d.score));
            }
            r
        })
        .collect()
}

/// mAP over all videos. `results[i]` and `gts[i]` belong to the same video.
/// Detections of a class are pooled across videos and ranked by score, ties
/// broken by video index and then by the per-video detection order.
pub fn mean_ap(results: &[TaskResults], gts: &[Vec<GroundTruthSegment>], cfg: &EvalConfig) -> Result<MapTable> {
    cfg.validate()?;
    if results.len() != gts.len() {
        return Err(Error::contract(format!(
            "{} result sets for {} annotated videos",
            results.len(),
            gts.len()
        )));
    }
    let mut values = Vec::with_capacity(3);
    let mut skipped = Vec::with_capacity(3);
    for task in Task::ALL {
        let mut gt_by_class: BTreeMap<(usize, usize), Vec<GtSegment>> = BTreeMap::new();
        for (v, segs) in gts.iter().enumerate() {
            for s in segs {
                gt_by_class.entry(task.key(s.verb, s.noun)).or_default().push(GtSegment {
                    video: v,
                    start: s.start,
                    end: s.end,
                });
            }
        }
        let mut det_by_class: BTreeMap<(usize, usize), Vec<(Detection, usize, usize)>> = BTreeMap::new();
        for (v, r) in results.iter().enumerate() {
            for (rank, d) in r.get(task).detections.iter().enumerate() {
                det_by_class
                    .entry(task.key(d.verb, d.noun))
                    .or_default()
                    .push((*d, v, rank));
            }
        }
        skipped.push(det_by_class.keys().filter(|k| !gt_by_class.contains_key(k)).count());
        let mut row = Vec::with_capacity(cfg.tiou_thresholds.len());
        for &thr in &cfg.tiou_thresholds {
            let mut total = 0.0;
            for (class, g) in &gt_by_class {
                let mut d = det_by_class.get(class).cloned().unwrap_or_default();
                d.sort_by(|a, b| {
                    b.0.score
                        .total_cmp(&a.0.score)
                        .then(a.1.cmp(&b.1))
                        .then(a.2.cmp(&b.2))
                });
                let scored: Vec<ScoredSegment> = d
                    .iter()
                    .map(|(det, v, _)| ScoredSegment {
                        video: *v,
                        start: det.start,
                        end: det.end,
                        score: det.score,
                    })
                    .collect();
                total += average_precision(&scored, g, thr).unwrap_or(0.0);
            }
            row.push(if gt_by_class.is_empty() {
                0.0
            } else {
                total / gt_by_class.len() as f64
            });
        }
        values.push(row);
    }
    Ok(MapTable {
        thresholds: cfg.tiou_thresholds.clone(),
        values,
        classes_without_gt: skipped,
    })
}

/// Detections that reproduce the annotations exactly, each with score 1.
pub fn oracle_results(video_id: &str, gts: &[GroundTruthSegment]) -> TaskResults {
    let dets: Vec<Detection> = gts
        .iter()
        .map(|g| Detection {
            start: g.start,
            end: g.end,
            verb: g.verb,
            noun: g.noun,
            score: 1.0,
        })
        .collect();
    let mk = |task| {
        let mut d = dets.clone();
        d.sort_by(rank_order);
        crate::postprocess::DetectionResult { task, detections: d }
    };
    TaskResults {
        video_id: video_id.into(),
        verb: mk(Task::Verb),
        noun: mk(Task::Noun),
        action: mk(Task::Action),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DurationGroup {
    XS,
    S,
    M,
    L,
    XL,
}

impl DurationGroup {
    pub const ALL: [DurationGroup; 5] = [
        DurationGroup::XS,
        DurationGroup::S,
        DurationGroup::M,
        DurationGroup::L,
        DurationGroup::XL,
    ];

    /// `(0,2]`, `(2,4]`, `(4,6]`, `(6,8]`, `(8,∞)` seconds.
    pub fn of(duration: f64) -> Self {
        if duration <= 2.0 {
            DurationGroup::XS
        } else if duration <= 4.0 {
            DurationGroup::S
        } else if duration <= 6.0 {
            DurationGroup::M
        } else if duration <= 8.0 {
            DurationGroup::L
        } else {
            DurationGroup::XL
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DurationGroup::XS => "XS",
            DurationGroup::S => "S",
            DurationGroup::M => "M",
            DurationGroup::L => "L",
            DurationGroup::XL => "XL",
        }
    }
}

/// One timestep's proposal measured against the segment it is responsible for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    /// Centre distance divided by the segment's half-length.
    pub relative_distance: f64,
    /// Centre distance in seconds.
    pub absolute_distance: f64,
    pub duration: f64,
    /// Position of the timestep within the segment, 0 at the start and 1 at the end.
    pub position: f64,
    pub tiou: f64,
    pub confidence: f64,
    /// `confidence − β·p_C`.
    pub confidence_without_centricity: f64,
    pub centricity: f64,
    /// Maximum fused class score at the timestep.
    pub actionness: f64,
}

/// Pairs every decoded proposal with the segment its timestep was assigned to
/// during training-target construction; unassigned timesteps are skipped.
/// Confidence is that of the proposal's best action candidate.
pub fn attribute_proposals(
    proposals: &[Proposal],
    targets: &TrainingTargets,
    gts: &[GroundTruthSegment],
    weights: &ScoreWeights,
    top_k_verb: usize,
    top_k_noun: usize,
) -> Result<Vec<ProfileSample>> {
    let mut offsets = Vec::with_capacity(targets.level_lengths.len());
    let mut acc = 0;
    for &len in &targets.level_lengths {
        offsets.push(acc);
        acc += len;
    }
    let mut out = Vec::new();
    for p in proposals {
        let (Some(&base), Some(&len)) = (offsets.get(p.level), targets.level_lengths.get(p.level)) else {
            return Err(Error::contract(format!("proposal level {} not in targets", p.level)));
        };
        if p.timestep >= len {
            return Err(Error::contract(format!(
                "proposal timestep {} beyond level length {len}",
                p.timestep
            )));
        }
        let Some(gi) = targets.matched[base + p.timestep] else {
            continue;
        };
        let g = gts
            .get(gi)
            .ok_or_else(|| Error::contract(format!("matched segment {gi} missing")))?;
        let x = p.timestep as f64 * targets.level_strides[p.level];
        let best = crate::postprocess::combine_verb_noun(p, top_k_verb, top_k_noun)
            .into_iter()
            .map(|(v, n, pv)| {
                let pa = p.audio_verb.as_ref().map_or(0.0, |a| a[v]) + p.audio_noun.as_ref().map_or(0.0, |a| a[n]);
                crate::postprocess::confidence_score(pv, pa, p.centricity, p.start_conf, p.end_conf, weights)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let actionness = p
            .verb_scores
            .iter()
            .chain(&p.noun_scores)
            .fold(0.0f64, |a, &b| a.max(b));
        out.push(ProfileSample {
            relative_distance: relative_distance(x, g),
            absolute_distance: (x - g.centre()).abs(),
            duration: g.duration(),
            position: ((x - g.start) / g.duration()).clamp(0.0, 1.0),
            tiou: tiou_unchecked((p.start, p.end), (g.start, g.end)),
            confidence: best,
            confidence_without_centricity: best - weights.beta * p.centricity,
            centricity: p.centricity,
            actionness,
        });
    }
    Ok(out)
}

/// Means over the samples falling in one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStats {
    pub mean_tiou: f64,
    pub mean_conf_with_centricity: f64,
    pub mean_conf_without: f64,
    pub mean_centricity: f64,
    pub count: usize,
}

/// One row of a profile; `stats` is `None` for an empty bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinRow {
    pub bin_low: f64,
    pub bin_high: f64,
    /// `None` pools all duration groups.
    pub group: Option<DurationGroup>,
    pub stats: Option<BinStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsBins {
    pub relative: Vec<BinRow>,
    pub absolute: Vec<BinRow>,
}

impl DiagnosticsBins {
    /// Rows of one group (or the pooled rows) in bin order.
    pub fn series(rows: &[BinRow], group: Option<DurationGroup>) -> Vec<BinRow> {
        rows.iter().filter(|r| r.group == group).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    pub relative: Vec<f64>,
    pub absolute: Vec<f64>,
}

impl Default for BinEdges {
    fn default() -> Self {
        Self {
            relative: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            absolute: vec![0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0, f64::INFINITY],
        }
    }
}

/// Bin index of `v` under half-open `[lo, hi)` bins, the last bin closed.
fn bin_of(edges: &[f64], v: f64) -> Option<usize> {
    let n = edges.len().checked_sub(1)?;
    if v < edges[0] || v > edges[n] {
        return None;
    }
    (0..n).find(|&i| v < edges[i + 1] || i == n - 1)
}

fn profile_rows(samples: &[ProfileSample], edges: &[f64], key: impl Fn(&ProfileSample) -> f64) -> Result<Vec<BinRow>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::config("bin edges must be strictly increasing with ≥ 2 entries"));
    }
    let groups: Vec<Option<DurationGroup>> =
        core::iter::once(None).chain(DurationGroup::ALL.into_iter().map(Some)).collect();
    let mut rows = Vec::new();
    for group in groups {
        let n = edges.len() - 1;
        let mut acc = vec![(0.0, 0.0, 0.0, 0.0, 0usize); n];
        for s in samples {
            if group.is_some_and(|g| DurationGroup::of(s.duration) != g) {
                continue;
            }
            if let Some(b) = bin_of(edges, key(s)) {
                let a = &mut acc[b];
                a.0 += s.tiou;
                a.1 += s.confidence;
                a.2 += s.confidence_without_centricity;
                a.3 += s.centricity;
                a.4 += 1;
            }
        }
        for (i, a) in acc.into_iter().enumerate() {
            let c = a.4 as f64;
            rows.push(BinRow {
                bin_low: edges[i],
                bin_high: edges[i + 1],
                group,
                stats: (a.4 > 0).then(|| BinStats {
                    mean_tiou: a.0 / c,
                    mean_conf_with_centricity: a.1 / c,
                    mean_conf_without: a.2 / c,
                    mean_centricity: a.3 / c,
                    count: a.4,
                }),
            });
        }
    }
    Ok(rows)
}

/// Mean tIoU and confidence per centre-distance bin, pooled and per duration
/// group, in both relative and absolute distance units.
pub fn centre_distance_profile(samples: &[ProfileSample], edges: &BinEdges) -> Result<DiagnosticsBins> {
    Ok(DiagnosticsBins {
        relative: profile_rows(samples, &edges.relative, |s| s.relative_distance)?,
        absolute: profile_rows(samples, &edges.absolute, |s| s.absolute_distance)?,
    })
}

/// Per-position means along the normalised segment axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionBin {
    pub low: f64,
    pub high: f64,
    pub mean_centricity: f64,
    pub mean_actionness: f64,
    pub mean_tiou: f64,
    pub count: usize,
}

/// `(position, centricity, actionness, tIoU)` samples averaged into `bins`
/// equal-width position bins; empty bins are omitted.
pub fn centricity_vs_actionness_profile(
    samples: &[(f64, f64, f64, f64)],
    bins: usize,
) -> Result<Vec<PositionBin>> {
    if bins == 0 {
        return Err(Error::config("need ≥ 1 position bin"));
    }
    let mut acc = vec![(0.0, 0.0, 0.0, 0usize); bins];
    for &(pos, c, a, t) in samples {
        if !(0.0..=1.0).contains(&pos) {
            return Err(Error::contract(format!("position {pos} outside [0, 1]")));
        }
        let b = ((pos * bins as f64) as usize).min(bins - 1);
        acc[b].0 += c;
        acc[b].1 += a;
        acc[b].2 += t;
        acc[b].3 += 1;
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .filter(|(_, a)| a.3 > 0)
        .map(|(i, a)| {
            let n = a.3 as f64;
            PositionBin {
                low: i as f64 / bins as f64,
                high: (i + 1) as f64 / bins as f64,
                mean_centricity: a.0 / n,
                mean_actionness: a.1 / n,
                mean_tiou: a.2 / n,
                count: a.3,
            }
        })
        .collect())
}

/// Pearson correlation; `None` when either series is constant or too short.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / crate::math::sqrt(sxx * syy))
}

/// First `n` populated bins of a series, as stats.
pub fn populated(rows: &[BinRow], n: usize) -> Vec<BinStats> {
    rows.iter().filter_map(|r| r.stats).take(n).collect()
}

pub fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1].partial_cmp(&w[0]) != Some(Ordering::Greater))
}

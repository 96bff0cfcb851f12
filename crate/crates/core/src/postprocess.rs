//! Proposal decoding, confidence scoring, verb/noun combination and Soft-NMS.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::config::BaselineMode;
use crate::eval::tiou_unchecked;
use crate::heads::HeadOutputs;
use crate::math;
use crate::{Error, Result};

/// One candidate segment decoded from a single timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub start: f64,
    pub end: f64,
    pub verb_scores: Vec<f64>,
    pub noun_scores: Vec<f64>,
    /// Audio-stream class scores (`p_a`); `None` when no audio classifier ran.
    pub audio_verb: Option<Vec<f64>>,
    pub audio_noun: Option<Vec<f64>>,
    /// `p_C`; 0 when the centricity head is disabled.
    pub centricity: f64,
    /// `p^s` and `p^e` read at the predicted boundaries; 0 when disabled.
    pub start_conf: f64,
    pub end_conf: f64,
    pub level: usize,
    pub timestep: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProposalSet {
    pub video_id: String,
    pub proposals: Vec<Proposal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Verb,
    Noun,
    Action,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Verb, Task::Noun, Task::Action];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Verb => "verb",
            Task::Noun => "noun",
            Task::Action => "action",
        }
    }

    /// Class identity under this task: the verb, the noun, or the pair.
    pub fn key(self, verb: usize, noun: usize) -> (usize, usize) {
        match self {
            Task::Verb => (verb, 0),
            Task::Noun => (0, noun),
            Task::Action => (verb, noun),
        }
    }
}

/// A scored, classified segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub start: f64,
    pub end: f64,
    pub verb: usize,
    pub noun: usize,
    pub score: f64,
}

/// Score descending, then earlier start, lower verb, lower noun, earlier end.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.total_cmp(&b.start))
        .then(a.verb.cmp(&b.verb))
        .then(a.noun.cmp(&b.noun))
        .then(a.end.total_cmp(&b.end))
}

/// Ranked detections of one task for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub task: Task,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResults {
    pub video_id: String,
    pub verb: DetectionResult,
    pub noun: DetectionResult,
    pub action: DetectionResult,
}

impl TaskResults {
    pub fn get(&self, task: Task) -> &DetectionResult {
        match task {
            Task::Verb => &self.verb,
            Task::Noun => &self.noun,
            Task::Action => &self.action,
        }
    }

    pub fn get_mut(&mut self, task: Task) -> &mut DetectionResult {
        match task {
            Task::Verb => &mut self.verb,
            Task::Noun => &mut self.noun,
            Task::Action => &mut self.action,
        }
    }
}

/// τ, β, γ of the confidence score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreWeights {
    pub tau: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            tau: 0.2,
            beta: 1.0,
            gamma: 0.7,
        }
    }
}

impl ScoreWeights {
    /// γ is zeroed unless the baseline refines boundaries.
    pub fn for_mode(self, mode: BaselineMode) -> Self {
        Self {
            gamma: if mode.has_boundary_head() { self.gamma } else { 0.0 },
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.tau, self.beta, self.gamma]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::config("score weights τ, β, γ must be finite and ≥ 0"));
        }
        Ok(())
    }
}

/// `S = p_v + τ·p_a + β·p_C + γ·(p_s + p_e)`.
pub fn confidence_score(pv: f64, pa: f64, pc: f64, ps: f64, pe: f64, w: &ScoreWeights) -> f64 {
    pv + w.tau * pa + w.beta * pc + w.gamma * (ps + pe)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocessConfig {
    pub top_k_verb: usize,
    pub top_k_noun: usize,
    pub pre_nms_top_k: usize,
    pub nms_sigma: f64,
    pub score_floor: f64,
    pub max_detections: usize,
    /// Decoded segments shorter than this (seconds) are dropped.
    pub min_length: f64,
    pub weights: ScoreWeights,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            top_k_verb: 11,
            top_k_noun: 33,
            pre_nms_top_k: 2000,
            nms_sigma: 0.5,
            score_floor: 1e-4,
            max_detections: 200,
            min_length: 1e-3,
            weights: ScoreWeights::default(),
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.top_k_verb == 0 || self.top_k_noun == 0 || self.max_detections == 0 || self.pre_nms_top_k == 0 {
            return Err(Error::config("top-k and detection limits must be ≥ 1"));
        }
        if !(self.nms_sigma > 0.0) || !(self.score_floor >= 0.0) || !(self.min_length >= 0.0) {
            return Err(Error::config(
                "nms sigma must be > 0, score floor and min length ≥ 0",
            ));
        }
        Ok(())
    }
}

/// One proposal per timestep: `x = t·stride`, `s = x − o^s·stride`,
/// `e = x + o^e·stride`, clamped to `[0, duration]`. Segments shorter than
/// `min_length` are dropped. Boundary confidences are read at the level
/// timesteps nearest to `s` and `e`.
pub fn decode_proposals(outputs: &HeadOutputs, duration: f64, min_length: f64) -> Vec<Proposal> {
    let (cv, cn) = (outputs.num_verbs, outputs.num_nouns);
    let mut out = Vec::new();
    for (l, lv) in outputs.levels.iter().enumerate() {
        let stride = lv.stride;
        let n = lv.len();
        let nearest = |sec: f64| -> usize {
            let i = math::round(sec / stride);
            if i <= 0.0 {
                0
            } else {
                (i as usize).min(n - 1)
            }
        };
        for (t, &(os, oe)) in lv.offsets.iter().enumerate() {
            let x = t as f64 * stride;
            let s = (x - os * stride).clamp(0.0, duration);
            let e = (x + oe * stride).clamp(0.0, duration);
            if !(e - s >= min_length) || e - s <= 0.0 {
                continue;
            }
            let (start_conf, end_conf) = match &lv.boundary {
                Some(b) => (b[nearest(s)].0, b[nearest(e)].1),
                None => (0.0, 0.0),
            };
            out.push(Proposal {
                start: s,
                end: e,
                verb_scores: lv.verb[t * cv..(t + 1) * cv].to_vec(),
                noun_scores: lv.noun[t * cn..(t + 1) * cn].to_vec(),
                audio_verb: lv.audio_verb.as_ref().map(|a| a[t * cv..(t + 1) * cv].to_vec()),
                audio_noun: lv.audio_noun.as_ref().map(|a| a[t * cn..(t + 1) * cn].to_vec()),
                centricity: lv.centricity.as_ref().map_or(0.0, |c| c[t]),
                start_conf,
                end_conf,
                level: l,
                timestep: t,
            });
        }
    }
    out
}

/// Indices of the `k` largest scores (clipped to the class count), highest
/// first, ties to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k.min(scores.len()));
    idx
}

/// Top-`k_verb` verbs × top-`k_noun` nouns with pair score `verb + noun`.
pub fn combine_verb_noun(p: &Proposal, k_verb: usize, k_noun: usize) -> Vec<(usize, usize, f64)> {
    let verbs = top_k(&p.verb_scores, k_verb);
    let nouns = top_k(&p.noun_scores, k_noun);
    let mut out = Vec::with_capacity(verbs.len() * nouns.len());
    for &v in &verbs {
        for &n in &nouns {
            out.push((v, n, p.verb_scores[v] + p.noun_scores[n]));
        }
    }
    out
}

fn audio_score(p: &Proposal, verb: Option<usize>, noun: Option<usize>) -> f64 {
    let v = match (verb, &p.audio_verb) {
        (Some(i), Some(a)) => a[i],
        _ => 0.0,
    };
    let n = match (noun, &p.audio_noun) {
        (Some(i), Some(a)) => a[i],
        _ => 0.0,
    };
    v + n
}

/// Scored candidates of one proposal for `task`. Verb candidates carry the
/// proposal's best noun (and vice versa) so that every detection names a pair.
pub fn proposal_candidates(p: &Proposal, task: Task, cfg: &PostprocessConfig) -> Vec<Detection> {
    let w = &cfg.weights;
    let extra = |pv: f64, pa: f64| confidence_score(pv, pa, p.centricity, p.start_conf, p.end_conf, w);
    let det = |verb, noun, score| Detection {
        start: p.start,
        end: p.end,
        verb,
        noun,
        score,
    };
    match task {
        Task::Verb => {
            let best_noun = top_k(&p.noun_scores, 1)[0];
            top_k(&p.verb_scores, cfg.top_k_verb)
                .into_iter()
                .map(|v| det(v, best_noun, extra(p.verb_scores[v], audio_score(p, Some(v), None))))
                .collect()
        }
        Task::Noun => {
            let best_verb = top_k(&p.verb_scores, 1)[0];
            top_k(&p.noun_scores, cfg.top_k_noun)
                .into_iter()
                .map(|n| det(best_verb, n, extra(p.noun_scores[n], audio_score(p, None, Some(n)))))
                .collect()
        }
        Task::Action => combine_verb_noun(p, cfg.top_k_verb, cfg.top_k_noun)
            .into_iter()
            .map(|(v, n, pv)| det(v, n, extra(pv, audio_score(p, Some(v), Some(n)))))
            .collect(),
    }
}

/// Gaussian Soft-NMS restricted to detections of the same class under `task`.
///
/// Repeatedly emits the highest-ranked remaining detection and multiplies the
/// score of every remaining same-class detection by `exp(−tIoU²/σ)`. Stops after
/// `max_out` detections or once the best remaining score is below `score_floor`.
pub fn soft_nms(
    mut dets: Vec<Detection>,
    task: Task,
    sigma: f64,
    score_floor: f64,
    max_out: usize,
) -> Vec<Detection> {
    let mut out = Vec::with_capacity(max_out.min(dets.len()));
    while out.len() < max_out && !dets.is_empty() {
        let mut best = 0;
        for i in 1..dets.len() {
            if rank_order(&dets[i], &dets[best]) == Ordering::Less {
                best = i;
            }
        }
        let top = dets.swap_remove(best);
        if top.score < score_floor {
            break;
        }
        let key = task.key(top.verb, top.noun);
        for d in dets.iter_mut() {
            if task.key(d.verb, d.noun) == key {
                let iou = tiou_unchecked((top.start, top.end), (d.start, d.end));
                d.score *= math::exp(-iou * iou / sigma);
            }
        }
        out.push(top);
    }
    out
}

/// Candidates of every proposal, ranked and cut to the pre-NMS budget, then
/// suppressed.
pub fn run_task(proposals: &[Proposal], task: Task, cfg: &PostprocessConfig) -> DetectionResult {
    let mut cands: Vec<Detection> = proposals
        .iter()
        .flat_map(|p| proposal_candidates(p, task, cfg))
        .collect();
    cands.sort_by(rank_order);
    cands.truncate(cfg.pre_nms_top_k);
    DetectionResult {
        task,
        detections: soft_nms(cands, task, cfg.nms_sigma, cfg.score_floor, cfg.max_detections),
    }
}

/// Verb-, noun- and pair-keyed results for one video.
pub fn run_postprocess(set: &ProposalSet, cfg: &PostprocessConfig) -> Result<TaskResults> {
    cfg.validate()?;
    for p in &set.proposals {
        if p.verb_scores.is_empty() || p.noun_scores.is_empty() {
            return Err(Error::contract(format!(
                "proposal at level {} t={} has no class scores",
                p.level, p.timestep
            )));
        }
    }
    Ok(TaskResults {
        video_id: set.video_id.clone(),
        verb: run_task(&set.proposals, Task::Verb, cfg),
        noun: run_task(&set.proposals, Task::Noun, cfg),
        action: run_task(&set.proposals, Task::Action, cfg),
    })
}

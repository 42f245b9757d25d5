//! Category-agnostic mask AP50 / AP / AR.
//!
//! Conventions follow COCO: detections are matched greedily in descending
//! score order, AP uses 101-point interpolation of the precision envelope,
//! and recall counts at most 100 detections per image. Ground truth that is
//! more than 80% occluded is ignored: a detection matched to it counts as
//! neither a true nor a false positive, and it is never a miss.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rle::Rle;

pub const IGNORE_OCCLUSION: f64 = 0.8;
pub const MAX_DETECTIONS: usize = 100;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub mask: Rle,
    pub score: f64,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        if !(self.score.is_finite() && (0.0..=1.0).contains(&self.score)) {
            return Err(Error::InvalidParameter(format!("score {} not in [0, 1]", self.score)));
        }
        if self.mask.area() == 0 {
            return Err(Error::InvalidParameter("empty detection mask".into()));
        }
        self.mask.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub mask: Rle,
    pub occlusion_rate: f64,
}

impl GroundTruthInstance {
    pub fn ignore(&self) -> bool {
        self.occlusion_rate > IGNORE_OCCLUSION
    }
}

pub fn mask_iou(a: &Rle, b: &Rle) -> Result<f64> {
    a.iou(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TruePositive(usize),
    FalsePositive,
    /// Matched to an ignored ground truth; excluded from scoring.
    Ignored(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Per detection, in input order.
    pub outcomes: Vec<Outcome>,
    /// Per ground truth, the detection it was matched to.
    pub gt_match: Vec<Option<usize>>,
}

impl Matching {
    pub fn counts(&self, gts: &[GroundTruthInstance]) -> Counts {
        let mut c = Counts::default();
        for o in &self.outcomes {
            match o {
                Outcome::TruePositive(_) => c.tp += 1,
                Outcome::FalsePositive => c.fp += 1,
                Outcome::Ignored(_) => c.ignored += 1,
            }
        }
        c.fn_ = gts
            .iter()
            .zip(&self.gt_match)
            .filter(|(g, m)| !g.ignore() && m.is_none())
            .count();
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ignored: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ignored += o.ignored;
    }
}

fn by_score_desc(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Pairwise IoU, `ious[d][g]`.
pub fn iou_matrix(dets: &[Detection], gts: &[GroundTruthInstance]) -> Result<Vec<Vec<f64>>> {
    dets.iter()
        .map(|d| gts.iter().map(|g| mask_iou(&d.mask, &g.mask)).collect())
        .collect()
}

fn match_with_ious(dets: &[Detection], gts: &[GroundTruthInstance], ious: &[Vec<f64>], iou_t: f64) -> Matching {
    let mut outcomes = vec![Outcome::FalsePositive; dets.len()];
    let mut gt_match = vec![None; gts.len()];
    for d in by_score_desc(dets) {
        // Non-ignored ground truth first, then ignored; highest IoU, then lowest index.
        let mut best: Option<(bool, f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            let iou = ious[d][g];
            if gt_match[g].is_some() || iou < iou_t {
                continue;
            }
            let cand = (!gt.ignore(), iou, g);
            let better = match best {
                None => true,
                Some((kept, biou, _)) => (cand.0, cand.1).partial_cmp(&(kept, biou)) == Some(Ordering::Greater),
            };
            if better {
                best = Some(cand);
            }
        }
        if let Some((regular, _, g)) = best {
            gt_match[g] = Some(d);
            outcomes[d] = if regular { Outcome::TruePositive(g) } else { Outcome::Ignored(g) };
        }
    }
    Matching { outcomes, gt_match }
}

pub fn match_detections(dets: &[Detection], gts: &[GroundTruthInstance], iou_t: f64) -> Result<Matching> {
    if !(iou_t > 0.0 && iou_t <= 1.0) {
        return Err(Error::InvalidParameter(format!("IoU threshold {iou_t} not in (0, 1]")));
    }
    let ious = iou_matrix(dets, gts)?;
    Ok(match_with_ious(dets, gts, &ious, iou_t))
}

/// 101-point interpolated AP from score-ranked TP flags (ignored detections
/// already removed) and the number of non-ignored ground truths.
pub fn interpolated_ap(ranked_tp: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut precision = Vec::with_capacity(ranked_tp.len());
    for (k, &hit) in ranked_tp.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / positives as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

/// AP for a single image at one threshold.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruthInstance], iou_t: f64) -> Result<f64> {
    let m = match_detections(dets, gts, iou_t)?;
    let ranked: Vec<bool> = by_score_desc(dets)
        .into_iter()
        .filter_map(|d| match m.outcomes[d] {
            Outcome::TruePositive(_) => Some(true),
            Outcome::FalsePositive => Some(false),
            Outcome::Ignored(_) => None,
        })
        .collect();
    Ok(interpolated_ap(&ranked, gts.iter().filter(|g| !g.ignore()).count()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalImage {
    pub image_id: String,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruthInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap50: f64,
    pub ap: f64,
    pub ar: f64,
    pub iou_thresholds: Vec<f64>,
    pub per_threshold_ap: Vec<f64>,
    pub per_threshold_recall: Vec<f64>,
    pub per_threshold_counts: Vec<Counts>,
    pub images: usize,
    pub ground_truth: usize,
    pub ignored_ground_truth: usize,
    pub detections: usize,
}

/// Dataset-level metrics. Image order does not affect the result.
pub fn evaluate(images: &[EvalImage]) -> Result<EvalResult> {
    let mut sorted: Vec<&EvalImage> = images.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    for w in sorted.windows(2) {
        if w[0].image_id == w[1].image_id {
            return Err(Error::InvalidParameter(format!("duplicate image id {}", w[0].image_id)));
        }
    }
    let thresholds = iou_thresholds();
    let mut positives = 0usize;
    let mut ignored_gt = 0usize;
    let mut kept_dets = 0usize;
    // (score, image rank, detection index, outcome per threshold)
    let mut pool: Vec<(f64, usize, usize, Vec<Outcome>)> = Vec::new();
    let mut counts = vec![Counts::default(); thresholds.len()];
    for (rank, img) in sorted.iter().enumerate() {
        for d in &img.detections {
            d.validate()?;
        }
        let order = by_score_desc(&img.detections);
        let keep: Vec<usize> = order.into_iter().take(MAX_DETECTIONS).collect();
        let dets: Vec<Detection> = keep.iter().map(|&i| img.detections[i].clone()).collect();
        kept_dets += dets.len();
        positives += img.ground_truth.iter().filter(|g| !g.ignore()).count();
        ignored_gt += img.ground_truth.iter().filter(|g| g.ignore()).count();
        let ious = iou_matrix(&dets, &img.ground_truth)?;
        let matchings: Vec<Matching> = thresholds
            .iter()
            .map(|&t| match_with_ious(&dets, &img.ground_truth, &ious, t))
            .collect();
        for (c, m) in counts.iter_mut().zip(&matchings) {
            *c += m.counts(&img.ground_truth);
        }
        for (k, &orig) in keep.iter().enumerate() {
            pool.push((dets[k].score, rank, orig, matchings.iter().map(|m| m.outcomes[k]).collect()));
        }
    }
    pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let per_ap: Vec<f64> = (0..thresholds.len())
        .map(|t| {
            let ranked: Vec<bool> = pool
                .iter()
                .filter_map(|p| match p.3[t] {
                    Outcome::TruePositive(_) => Some(true),
                    Outcome::FalsePositive => Some(false),
                    Outcome::Ignored(_) => None,
                })
                .collect();
            interpolated_ap(&ranked, positives)
        })
        .collect();
    let per_recall: Vec<f64> = counts
        .iter()
        .map(|c| if positives == 0 { 0.0 } else { c.tp as f64 / positives as f64 })
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(EvalResult {
        ap50: per_ap[0],
        ap: mean(&per_ap),
        ar: mean(&per_recall),
        iou_thresholds: thresholds.to_vec(),
        per_threshold_ap: per_ap,
        per_threshold_recall: per_recall,
        per_threshold_counts: counts,
        images: images.len(),
        ground_truth: positives + ignored_gt,
        ignored_ground_truth: ignored_gt,
        detections: kept_dets,
    })
}

//! Reference evaluator: exhaustive assignment search, pixel-counted IoU and
//! AP from the definition of the interpolated precision envelope.

#![allow(dead_code)]

use clutterkit::eval::{Detection, EvalImage, GroundTruthInstance};
use clutterkit::grid::BinaryMask;
use clutterkit::rle::Rle;
use rand::Rng;

pub const SIDE: usize = 16;

pub fn pixel_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let inter = a.as_slice().iter().zip(b.as_slice()).filter(|(p, q)| **p && **q).count();
    let union = a.as_slice().iter().zip(b.as_slice()).filter(|(p, q)| **p || **q).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RefCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Per detection (input order): `Some((gt, ignored))` or `None`.
pub type Assignment = Vec<Option<(usize, bool)>>;

fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut o: Vec<usize> = (0..scores.len()).collect();
    o.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    o
}

/// Enumerates every partial one-to-one assignment of detections to ground
/// truths with IoU at least `t`, and returns the one whose per-detection
/// preference keys are lexicographically largest in score order. Preference
/// is a regular ground truth over an ignored one over nothing, then higher
/// IoU, then lower ground-truth index.
pub fn brute_force_assignment(ious: &[Vec<f64>], ignore: &[bool], scores: &[f64], t: f64) -> Assignment {
    let order = score_order(scores);
    let n_gt = ignore.len();
    let mut best: Option<(Vec<(i32, f64, i64)>, Assignment)> = None;
    let mut current: Assignment = vec![None; scores.len()];
    let mut used = vec![false; n_gt];

    fn key(a: &Assignment, order: &[usize], ious: &[Vec<f64>]) -> Vec<(i32, f64, i64)> {
        order
            .iter()
            .map(|&d| match a[d] {
                None => (0, -1.0, 0),
                Some((g, ig)) => (if ig { 1 } else { 2 }, ious[d][g], -(g as i64)),
            })
            .collect()
    }

    fn rec(
        k: usize,
        order: &[usize],
        ious: &[Vec<f64>],
        ignore: &[bool],
        t: f64,
        used: &mut Vec<bool>,
        current: &mut Assignment,
        best: &mut Option<(Vec<(i32, f64, i64)>, Assignment)>,
    ) {
        if k == order.len() {
            let kk = key(current, order, ious);
            let better = match best {
                None => true,
                Some((bk, _)) => kk.partial_cmp(bk) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                *best = Some((kk, current.clone()));
            }
            return;
        }
        let d = order[k];
        current[d] = None;
        rec(k + 1, order, ious, ignore, t, used, current, best);
        for g in 0..ignore.len() {
            if !used[g] && ious[d][g] >= t {
                used[g] = true;
                current[d] = Some((g, ignore[g]));
                rec(k + 1, order, ious, ignore, t, used, current, best);
                used[g] = false;
                current[d] = None;
            }
        }
    }

    rec(0, &order, ious, ignore, t, &mut used, &mut current, &mut best);
    best.map(|b| b.1).unwrap_or_default()
}

/// Largest number of regular ground truths that can be matched one-to-one.
pub fn max_cardinality(ious: &[Vec<f64>], ignore: &[bool], t: f64) -> usize {
    fn rec(d: usize, ious: &[Vec<f64>], ignore: &[bool], t: f64, used: &mut Vec<bool>) -> usize {
        if d == ious.len() {
            return 0;
        }
        let mut best = rec(d + 1, ious, ignore, t, used);
        for g in 0..ignore.len() {
            if !used[g] && !ignore[g] && ious[d][g] >= t {
                used[g] = true;
                best = best.max(1 + rec(d + 1, ious, ignore, t, used));
                used[g] = false;
            }
        }
        best
    }
    rec(0, ious, ignore, t, &mut vec![false; ignore.len()])
}

/// Interpolated precision at each of the 101 recall levels, taken directly
/// as the best precision at any rank whose recall reaches the level.
pub fn reference_ap(ranked_tp: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut points = vec![];
    let mut tp = 0;
    for (k, &hit) in ranked_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / (k + 1) as f64));
    }
    (0..=100)
        .map(|i| {
            let r = i as f64 / 100.0;
            points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

pub struct Reference {
    pub counts: Vec<RefCounts>,
    pub ap: Vec<f64>,
    pub recall: Vec<f64>,
}

pub fn thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

pub fn reference_evaluate(images: &[EvalImage]) -> Reference {
    let mut imgs: Vec<&EvalImage> = images.iter().collect();
    imgs.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let ts = thresholds();
    let mut counts = vec![RefCounts::default(); ts.len()];
    let mut pooled: Vec<Vec<(f64, usize, usize, Option<bool>)>> = vec![vec![]; ts.len()];
    let mut positives = 0;
    for (rank, img) in imgs.iter().enumerate() {
        let dm: Vec<BinaryMask> = img.detections.iter().map(|d| d.mask.decode().unwrap()).collect();
        let gm: Vec<BinaryMask> = img.ground_truth.iter().map(|g| g.mask.decode().unwrap()).collect();
        let ious: Vec<Vec<f64>> = dm.iter().map(|d| gm.iter().map(|g| pixel_iou(d, g)).collect()).collect();
        let ignore: Vec<bool> = img.ground_truth.iter().map(|g| g.occlusion_rate > 0.8).collect();
        let scores: Vec<f64> = img.detections.iter().map(|d| d.score).collect();
        positives += ignore.iter().filter(|i| !**i).count();
        for (ti, &t) in ts.iter().enumerate() {
            let a = brute_force_assignment(&ious, &ignore, &scores, t);
            let mut matched = vec![false; ignore.len()];
            for (d, slot) in a.iter().enumerate() {
                let outcome = match slot {
                    None => {
                        counts[ti].fp += 1;
                        Some(false)
                    }
                    Some((g, true)) => {
                        matched[*g] = true;
                        None
                    }
                    Some((g, false)) => {
                        matched[*g] = true;
                        counts[ti].tp += 1;
                        Some(true)
                    }
                };
                pooled[ti].push((scores[d], rank, d, outcome));
            }
            counts[ti].fn_ += (0..ignore.len()).filter(|&g| !ignore[g] && !matched[g]).count();
        }
    }
    let mut ap = vec![];
    for p in &mut pooled {
        p.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let ranked: Vec<bool> = p.iter().filter_map(|x| x.3).collect();
        ap.push(reference_ap(&ranked, positives));
    }
    let recall = counts
        .iter()
        .map(|c| if positives == 0 { 0.0 } else { c.tp as f64 / positives as f64 })
        .collect();
    Reference { counts, ap, recall }
}

fn random_rect(rng: &mut impl Rng) -> (usize, usize, usize, usize) {
    let w = rng.random_range(2..8);
    let h = rng.random_range(2..8);
    (rng.random_range(0..SIDE - w), rng.random_range(0..SIDE - h), w, h)
}

fn rect_mask(r: (usize, usize, usize, usize)) -> BinaryMask {
    BinaryMask::from_fn(SIDE, SIDE, |x, y| (r.0..r.0 + r.2).contains(&x) && (r.1..r.1 + r.3).contains(&y))
}

/// A small image with up to five rectangles of ground truth (some heavily
/// occluded) and up to five detections: jittered copies, exact copies,
/// duplicates and strays. Scores are coarse so ties occur.
pub fn toy_image(rng: &mut impl Rng, id: usize) -> EvalImage {
    let n_gt = rng.random_range(0..=5);
    let gts: Vec<(usize, usize, usize, usize)> = (0..n_gt).map(|_| random_rect(rng)).collect();
    let ground_truth = gts
        .iter()
        .map(|&r| GroundTruthInstance {
            mask: Rle::encode(&rect_mask(r)),
            occlusion_rate: if rng.random_bool(0.25) { rng.random_range(0.81..1.0) } else { rng.random_range(0.0..0.8) },
        })
        .collect();
    let n_det = rng.random_range(0..=5);
    let detections = (0..n_det)
        .map(|_| {
            let r = if !gts.is_empty() && rng.random_bool(0.75) {
                let (x, y, w, h) = gts[rng.random_range(0..gts.len())];
                if rng.random_bool(0.3) {
                    (x, y, w, h)
                } else {
                    let w2 = (w as i64 + rng.random_range(-1..=1)).clamp(1, (SIDE - x) as i64) as usize;
                    let h2 = (h as i64 + rng.random_range(-1..=1)).clamp(1, (SIDE - y) as i64) as usize;
                    let x2 = (x + rng.random_range(0..=1)).min(SIDE - w2);
                    (x2, y, w2, h2)
                }
            } else {
                random_rect(rng)
            };
            Detection { mask: Rle::encode(&rect_mask(r)), score: f64::from(rng.random_range(1..=10u8)) / 10.0 }
        })
        .collect();
    EvalImage { image_id: format!("img{id:04}"), detections, ground_truth }
}

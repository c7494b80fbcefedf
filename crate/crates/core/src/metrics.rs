//! Geometry (accuracy / completeness / precision / recall / F-score) and
//! segmentation (VOI / RI / SC) metrics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::tablet::Tablet;
use crate::Vec3;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledPointCloud {
    pub points: Vec<Vec3>,
    pub labels: Vec<usize>,
}

impl LabeledPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One point per texel with alpha above 0.5, labeled by tablet index.
pub fn sample_tablets(tablets: &[Tablet]) -> LabeledPointCloud {
    let mut cloud = LabeledPointCloud::default();
    for (id, t) in tablets.iter().enumerate() {
        for row in 0..t.texture.height {
            for col in 0..t.texture.width {
                if t.texture.alpha[t.texture.index(row, col)] > 0.5 {
                    cloud.points.push(t.texel_to_world(row as f64 + 0.5, col as f64 + 0.5));
                    cloud.labels.push(id);
                }
            }
        }
    }
    cloud
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryMetrics {
    /// Mean distance from predicted points to the ground truth.
    pub accuracy: f64,
    /// Mean distance from ground-truth points to the prediction.
    pub completeness: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

fn nearest_distances(from: &[Vec3], to: &KdTree) -> Vec<f64> {
    from.iter().map(|p| to.nearest(p, 1)[0].1).collect()
}

pub fn geometry_metrics(pred: &[Vec3], gt: &[Vec3], tau: f64) -> Result<GeometryMetrics> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyInput("point cloud".into()));
    }
    let d_pred = nearest_distances(pred, &KdTree::build(gt));
    let d_gt = nearest_distances(gt, &KdTree::build(pred));
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let frac = |d: &[f64]| d.iter().filter(|&&v| v < tau).count() as f64 / d.len() as f64;
    let precision = frac(&d_pred);
    let recall = frac(&d_gt);
    let fscore = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(GeometryMetrics {
        accuracy: mean(&d_pred),
        completeness: mean(&d_gt),
        precision,
        recall,
        fscore,
    })
}

/// Label of the nearest predicted point for every query point; `None` when
/// the prediction is empty.
pub fn transfer_labels(pred: &LabeledPointCloud, queries: &[Vec3]) -> Vec<Option<usize>> {
    if pred.is_empty() {
        return vec![None; queries.len()];
    }
    let tree = KdTree::build(&pred.points);
    queries.iter().map(|q| Some(pred.labels[tree.nearest(q, 1)[0].0])).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    /// Variation of information, natural log.
    pub voi: f64,
    pub ri: f64,
    pub sc: f64,
}

pub fn segmentation_scores(pred: &[usize], gt: &[usize]) -> Result<SegmentationScores> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} predicted vs {} ground-truth labels", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("labels".into()));
    }
    let n = pred.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut a: HashMap<usize, f64> = HashMap::new();
    let mut b: HashMap<usize, f64> = HashMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        *joint.entry((p, g)).or_default() += 1.0;
        *a.entry(p).or_default() += 1.0;
        *b.entry(g).or_default() += 1.0;
    }
    let entropy = |m: &HashMap<usize, f64>| -> f64 {
        m.values().map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
    };
    let mutual: f64 = joint
        .iter()
        .map(|(&(p, g), &c)| {
            let pij = c / n;
            pij * (pij / ((a[&p] / n) * (b[&g] / n))).ln()
        })
        .sum();
    let voi = (entropy(&a) + entropy(&b) - 2.0 * mutual).max(0.0);

    let pairs = |c: f64| c * (c - 1.0) / 2.0;
    let total = pairs(n);
    let ri = if total > 0.0 {
        let sj: f64 = joint.values().map(|&c| pairs(c)).sum();
        let sa: f64 = a.values().map(|&c| pairs(c)).sum();
        let sb: f64 = b.values().map(|&c| pairs(c)).sum();
        (total + 2.0 * sj - sa - sb) / total
    } else {
        1.0
    };

    let mut best: HashMap<usize, f64> = HashMap::new();
    for (&(p, g), &c) in &joint {
        let iou = c / (a[&p] + b[&g] - c);
        let e = best.entry(g).or_default();
        if iou > *e {
            *e = iou;
        }
    }
    let sc = best.iter().map(|(g, iou)| b[g] / n * iou).sum();
    Ok(SegmentationScores { voi, ri, sc })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub tau: f64,
    pub geometry: GeometryMetrics,
    pub segmentation: SegmentationScores,
    pub predicted_points: usize,
    pub gt_points: usize,
}

/// Full evaluation of predicted tablets against a labeled ground-truth cloud.
pub fn evaluate(tablets: &[Tablet], gt: &LabeledPointCloud, tau: f64) -> Result<Evaluation> {
    let pred = sample_tablets(tablets);
    let geometry = geometry_metrics(&pred.points, &gt.points, tau)?;
    let transferred: Vec<usize> = transfer_labels(&pred, &gt.points)
        .into_iter()
        .map(|l| l.unwrap_or(usize::MAX))
        .collect();
    let segmentation = segmentation_scores(&transferred, &gt.labels)?;
    Ok(Evaluation {
        tau,
        geometry,
        segmentation,
        predicted_points: pred.len(),
        gt_points: gt.len(),
    })
}

//! Radius-based 3D precision/recall/F1 and 2D mask metrics.

mod bench;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bench::{
    benchmark_run, train_cameras, BenchConfig, BenchReport, EvalConfig, EvalContext, QueryConfig, ReportRow, TimingRow,
    REPORT_HEADER, REPORT_VERSION, SUMMARY_VERSION, TIMING_VERSION,
};

use crate::error::{Error, Result};
use crate::geom::dist2;
use crate::spatial::PointGrid;

/// Number of evenly spaced score thresholds swept by [`average_precision`].
pub const AP_LEVELS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub radius: f64,
    pub pred_count: usize,
    pub gt_count: usize,
    /// Predicted points with a ground-truth point within the radius.
    pub matched_pred: usize,
    /// Ground-truth points with a predicted point within the radius.
    pub matched_gt: usize,
    /// Both sets empty; all scores are reported as 0.
    pub degenerate: bool,
}

fn report(radius: f64, pred_count: usize, gt_count: usize, matched_pred: usize, matched_gt: usize) -> F1Report {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(matched_pred, pred_count);
    let recall = ratio(matched_gt, gt_count);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    F1Report {
        precision,
        recall,
        f1,
        radius,
        pred_count,
        gt_count,
        matched_pred,
        matched_gt,
        degenerate: pred_count == 0 && gt_count == 0,
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Input(format!("radius must be positive and finite, got {radius}")));
    }
    Ok(())
}

fn count_covered(points: &[[f64; 3]], grid: &PointGrid, radius: f64) -> usize {
    points.par_iter().filter(|p| grid.any_within(p, radius)).count()
}

/// Bidirectional radius matching between predicted and ground-truth points.
pub fn f1_3d(pred: &[[f64; 3]], gt: &[[f64; 3]], radius: f64) -> Result<F1Report> {
    check_radius(radius)?;
    let matched_pred = if gt.is_empty() {
        0
    } else {
        count_covered(pred, &PointGrid::new(gt, radius), radius)
    };
    let matched_gt = if pred.is_empty() {
        0
    } else {
        count_covered(gt, &PointGrid::new(pred, radius), radius)
    };
    Ok(report(radius, pred.len(), gt.len(), matched_pred, matched_gt))
}

/// Same as [`f1_3d`] by exhaustive pairwise search.
pub fn f1_3d_brute_force(pred: &[[f64; 3]], gt: &[[f64; 3]], radius: f64) -> Result<F1Report> {
    check_radius(radius)?;
    let r2 = radius * radius;
    let covered = |a: &[[f64; 3]], b: &[[f64; 3]]| a.iter().filter(|p| b.iter().any(|q| dist2(p, q) <= r2)).count();
    Ok(report(radius, pred.len(), gt.len(), covered(pred, gt), covered(gt, pred)))
}

/// Mean spacing of `n` area-uniform samples on a surface of area `area`.
pub fn sampling_spacing(area: f64, n: usize) -> f64 {
    (area / n.max(1) as f64).sqrt()
}

/// Twice the sampling spacing of the ground-truth points.
pub fn default_radius(area: f64, n: usize) -> Result<f64> {
    let r = 2.0 * sampling_spacing(area, n);
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Input(format!("surface area {area} gives no usable radius")));
    }
    Ok(r)
}

/// Intersection over union of two masks; `None` when the union is empty.
pub fn iou(pred: &[bool], gt: &[bool]) -> Result<Option<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!("mask sizes differ: {} vs {}", pred.len(), gt.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (a, b) in pred.iter().zip(gt) {
        inter += (*a && *b) as usize;
        union += (*a || *b) as usize;
    }
    Ok((union > 0).then(|| inter as f64 / union as f64))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegReport2D {
    /// Per query, mean IoU over views with a nonempty union.
    pub per_query: Vec<Option<f64>>,
    /// `[query][view]` IoU, `None` where the union is empty.
    pub per_view: Vec<Vec<Option<f64>>>,
    pub miou: f64,
    /// Query/view pairs left out for an empty union.
    pub excluded: usize,
}

/// Mean IoU of `pred[query][view]` against `gt[query][view]`.
pub fn miou_2d(pred: &[Vec<Vec<bool>>], gt: &[Vec<Vec<bool>>]) -> Result<SegReport2D> {
    if pred.len() != gt.len() {
        return Err(Error::Contract("query counts differ".into()));
    }
    let mut out = SegReport2D::default();
    for (pq, gq) in pred.iter().zip(gt) {
        if pq.len() != gq.len() {
            return Err(Error::Contract("view counts differ".into()));
        }
        let views: Vec<Option<f64>> = pq.iter().zip(gq).map(|(p, g)| iou(p, g)).collect::<Result<_>>()?;
        out.excluded += views.iter().filter(|v| v.is_none()).count();
        let valid: Vec<f64> = views.iter().flatten().copied().collect();
        out.per_query
            .push((!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64));
        out.per_view.push(views);
    }
    let valid: Vec<f64> = out.per_query.iter().flatten().copied().collect();
    out.miou = if valid.is_empty() {
        0.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    Ok(out)
}

/// Area under the precision-recall curve of `scores` against `gt`, swept
/// over [`AP_LEVELS`] thresholds `k / (AP_LEVELS - 1)`.
///
/// A pixel is predicted positive when its score is at least the threshold.
/// Precision is replaced by its maximum at equal or higher recall and the
/// curve is integrated with the trapezoidal rule from recall 0, where it
/// takes the value of the first point. `None` when `gt` is empty.
pub fn average_precision(scores: &[f64], gt: &[bool]) -> Result<Option<f64>> {
    if scores.len() != gt.len() {
        return Err(Error::Contract(format!("score and mask sizes differ: {} vs {}", scores.len(), gt.len())));
    }
    let positives = gt.iter().filter(|g| **g).count();
    if positives == 0 {
        return Ok(None);
    }
    let top = (AP_LEVELS - 1) as f64;
    // hist[k]: pixels whose score reaches threshold k but not k + 1.
    let mut hist_pos = vec![0usize; AP_LEVELS];
    let mut hist_all = vec![0usize; AP_LEVELS];
    for (s, g) in scores.iter().zip(gt) {
        if !s.is_finite() {
            return Err(Error::Contract("non-finite score".into()));
        }
        // Largest k with k / top <= s, robust to rounding in s * top.
        let mut k = (s * top).floor().clamp(-1.0, top) as i64;
        while k >= 0 && k as f64 / top > *s {
            k -= 1;
        }
        while k < top as i64 && (k + 1) as f64 / top <= *s {
            k += 1;
        }
        if k < 0 {
            continue;
        }
        hist_all[k as usize] += 1;
        hist_pos[k as usize] += *g as usize;
    }
    // (recall, precision) from the highest threshold down.
    let mut curve = Vec::with_capacity(AP_LEVELS);
    let (mut tp, mut all) = (0usize, 0usize);
    for k in (0..AP_LEVELS).rev() {
        tp += hist_pos[k];
        all += hist_all[k];
        if all > 0 {
            curve.push((tp as f64 / positives as f64, tp as f64 / all as f64));
        }
    }
    if curve.is_empty() {
        return Ok(Some(0.0));
    }
    // Recall is nondecreasing along `curve`; take the max precision to the right.
    for i in (0..curve.len() - 1).rev() {
        curve[i].1 = curve[i].1.max(curve[i + 1].1);
    }
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, curve[0].1);
    for &(r, p) in &curve {
        area += (r - r0) * (p + p0) / 2.0;
        r0 = r;
        p0 = p;
    }
    Ok(Some(area))
}

/// Mean average precision over queries of `scores[query][view]` (pixels
/// pooled over views). Returns the mean and the number of queries left out
/// for empty ground truth.
pub fn map_2d(scores: &[Vec<Vec<f64>>], gt: &[Vec<Vec<bool>>]) -> Result<(f64, usize)> {
    if scores.len() != gt.len() {
        return Err(Error::Contract("query counts differ".into()));
    }
    let mut aps = Vec::new();
    let mut excluded = 0;
    for (sq, gq) in scores.iter().zip(gt) {
        if sq.len() != gq.len() {
            return Err(Error::Contract("view counts differ".into()));
        }
        let s: Vec<f64> = sq.iter().flatten().copied().collect();
        let g: Vec<bool> = gq.iter().flatten().copied().collect();
        match average_precision(&s, &g)? {
            Some(ap) => aps.push(ap),
            None => excluded += 1,
        }
    }
    let mean = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    Ok((mean, excluded))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_of_constant_scorer_is_base_rate() {
        let gt: Vec<bool> = (0..100).map(|i| i < 30).collect();
        let ap = average_precision(&vec![0.4; 100], &gt).unwrap().unwrap();
        assert!((ap - 0.3).abs() < 1e-12);
    }

    #[test]
    fn ap_of_separating_scorer_is_one() {
        let gt: Vec<bool> = (0..100).map(|i| i % 3 == 0).collect();
        let s: Vec<f64> = gt.iter().map(|g| if *g { 0.8 } else { 0.2 }).collect();
        assert_eq!(average_precision(&s, &gt).unwrap(), Some(1.0));
    }

    #[test]
    fn ap_of_inverted_scorer_is_floor() {
        let gt: Vec<bool> = (0..100).map(|i| i < 25).collect();
        let s: Vec<f64> = gt.iter().map(|g| if *g { 0.1 } else { 0.9 }).collect();
        let ap = average_precision(&s, &gt).unwrap().unwrap();
        assert!((ap - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ap_threshold_is_inclusive() {
        // A score exactly on a level counts at that level.
        let s = [1.0, 0.0];
        assert_eq!(average_precision(&s, &[true, false]).unwrap(), Some(1.0));
    }

    #[test]
    fn half_overlap_iou() {
        let w = 8;
        let pred: Vec<bool> = (0..w * w).map(|i| (i % w) < 4).collect();
        let gt: Vec<bool> = (0..w * w).map(|i| (2..6).contains(&(i % w))).collect();
        assert!((iou(&pred, &gt).unwrap().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_union_excluded() {
        let r = miou_2d(&[vec![vec![false; 4], vec![true; 4]]], &[vec![vec![false; 4], vec![true; 4]]]).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.miou, 1.0);
        assert!(miou_2d(&[vec![vec![false; 4]]], &[vec![vec![false; 3]]]).is_err());
    }
}

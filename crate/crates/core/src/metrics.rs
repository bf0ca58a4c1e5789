//! Tracking metrics: success AUC over an IoU-threshold grid and center
//! precision at a pixel threshold.

use crate::bbox::BBox;
use crate::error::{Result, TregError};
use crate::regression::iou;

/// Per-frame outcome of tracking one sequence.
#[derive(Clone, Debug)]
pub struct TrackResult {
    pub name: String,
    pub pred: Vec<BBox>,
    pub gt: Vec<BBox>,
    pub ious: Vec<f64>,
    pub center_errors: Vec<f64>,
}

impl TrackResult {
    pub fn new(name: impl Into<String>, pred: Vec<BBox>, gt: Vec<BBox>) -> Result<Self> {
        if pred.len() != gt.len() || pred.is_empty() {
            return Err(TregError::Precondition(format!(
                "result lists must share a positive length, got {} and {}",
                pred.len(),
                gt.len()
            )));
        }
        let ious = pred.iter().zip(&gt).map(|(p, g)| iou(p, g)).collect();
        let center_errors = pred.iter().zip(&gt).map(|(p, g)| p.center_distance(g)).collect();
        Ok(TrackResult { name: name.into(), pred, gt, ious, center_errors })
    }

    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }

    pub fn success_auc(&self) -> f64 {
        success_auc(&self.ious)
    }

    pub fn precision_at(&self, threshold_px: f64) -> f64 {
        precision_at(&self.center_errors, threshold_px)
    }
}

/// The 21-point threshold grid 0, 0.05, ..., 1.0.
pub const AUC_THRESHOLDS: usize = 21;

/// Mean over the threshold grid of the fraction of frames with IoU
/// strictly above the threshold.
pub fn success_auc(ious: &[f64]) -> f64 {
    assert!(!ious.is_empty(), "success_auc needs at least one frame");
    let n = ious.len() as f64;
    let mut acc = 0.0;
    for i in 0..AUC_THRESHOLDS {
        let thr = i as f64 * 0.05;
        let hits = ious.iter().filter(|&&v| v > thr).count() as f64;
        acc += hits / n;
    }
    acc / AUC_THRESHOLDS as f64
}

/// Fraction of frames whose center error is at most `threshold_px`.
pub fn precision_at(center_errors: &[f64], threshold_px: f64) -> f64 {
    assert!(!center_errors.is_empty(), "precision_at needs at least one frame");
    let hits = center_errors.iter().filter(|&&e| e <= threshold_px).count();
    hits as f64 / center_errors.len() as f64
}

/// Mean of per-sequence success AUC over a set of results.
pub fn mean_success_auc(results: &[TrackResult]) -> f64 {
    results.iter().map(|r| r.success_auc()).sum::<f64>() / results.len() as f64
}

/// Mean of per-sequence precision over a set of results.
pub fn mean_precision(results: &[TrackResult], threshold_px: f64) -> f64 {
    results.iter().map(|r| r.precision_at(threshold_px)).sum::<f64>() / results.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::close;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_and_failed_tracking_bounds() {
        let ones = vec![1.0; 40];
        // Strict > at threshold 1.0 misses, so 20 of 21 thresholds count.
        assert!(close(success_auc(&ones), 20.0 / 21.0, 1e-12, 1e-15));
        let zeros = vec![0.0; 40];
        assert_eq!(success_auc(&zeros), 0.0);

        assert_eq!(precision_at(&vec![0.0; 10], 20.0), 1.0);
        assert_eq!(precision_at(&vec![100.0; 10], 20.0), 0.0);
    }

    // Brute-force double-loop oracle.
    #[test]
    fn success_auc_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..50 {
            let n = rng.gen_range(1..60);
            let ious: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let got = success_auc(&ious);
            let mut acc = 0.0;
            for i in 0..21 {
                let thr = i as f64 * 0.05;
                let mut hits = 0usize;
                for &v in &ious {
                    if v > thr {
                        hits += 1;
                    }
                }
                acc += hits as f64 / n as f64;
            }
            assert_eq!(got, acc / 21.0);
        }
    }

    #[test]
    fn precision_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        for _ in 0..50 {
            let n = rng.gen_range(1..60);
            let errs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..50.0)).collect();
            let thr = rng.gen_range(1.0..30.0);
            let got = precision_at(&errs, thr);
            let mut hits = 0usize;
            for &e in &errs {
                if e <= thr {
                    hits += 1;
                }
            }
            assert_eq!(got, hits as f64 / n as f64);
        }
    }

    #[test]
    fn auc_monotone_under_pointwise_decrease() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        for _ in 0..30 {
            let ious: Vec<f64> = (0..25).map(|_| rng.gen_range(0.0..1.0)).collect();
            let worse: Vec<f64> = ious
                .iter()
                .map(|&v| (v - rng.gen_range(0.0..0.3)).max(0.0))
                .collect();
            assert!(success_auc(&worse) <= success_auc(&ious) + 1e-12);
        }
    }

    #[test]
    fn track_result_validates_lengths() {
        let b = BBox::new(5.0, 5.0, 2.0, 2.0).unwrap();
        assert!(TrackResult::new("x", vec![b], vec![b, b]).is_err());
        let r = TrackResult::new("x", vec![b, b], vec![b, b]).unwrap();
        assert_eq!(r.ious, vec![1.0, 1.0]);
        assert_eq!(r.center_errors, vec![0.0, 0.0]);
    }
}

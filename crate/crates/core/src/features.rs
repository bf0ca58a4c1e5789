//! Fixed feature stem: grayscale frames to multi-channel feature grids.
//!
//! The stem is deterministic and carries no learnable parameters; all
//! learning happens downstream in the attention block, the regression
//! head, and the classifier encoder.

use crate::error::{Result, TregError};
use crate::regression::GridGeometry;
use crate::tensor::FeatureMap;

/// Channels produced per feature cell.
pub const STEM_CHANNELS: usize = 5;

/// Image pixels per feature cell.
pub const STEM_STRIDE: usize = 4;

/// Geometry of the stem's output grid over the input image.
pub fn stem_geometry() -> GridGeometry {
    GridGeometry::new(STEM_STRIDE as f64)
}

/// Extracts per-patch statistics from a single-channel image: mean
/// intensity, mean absolute horizontal and vertical gradients, intensity
/// standard deviation, and local contrast (max minus min). One feature
/// cell per `STEM_STRIDE x STEM_STRIDE` patch.
pub fn extract_features(image: &FeatureMap) -> Result<FeatureMap> {
    if image.channels() != 1 {
        return Err(TregError::shape("1-channel image", image.shape_str()));
    }
    let (h, w) = (image.height(), image.width());
    let s = STEM_STRIDE;
    if h % s != 0 || w % s != 0 {
        return Err(TregError::Precondition(format!(
            "image {h}x{w} not divisible by stride {s}"
        )));
    }
    let gh = h / s;
    let gw = w / s;
    let mut out = FeatureMap::zeros(STEM_CHANNELS, gh, gw);
    let px = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        image.get(0, r, c)
    };
    for gr in 0..gh {
        for gc in 0..gw {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut gx = 0.0;
            let mut gy = 0.0;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for dr in 0..s {
                for dc in 0..s {
                    let r = (gr * s + dr) as isize;
                    let c = (gc * s + dc) as isize;
                    let v = px(r, c);
                    sum += v;
                    sum_sq += v * v;
                    gx += (px(r, c + 1) - px(r, c - 1)).abs() * 0.5;
                    gy += (px(r + 1, c) - px(r - 1, c)).abs() * 0.5;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            let n = (s * s) as f64;
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean).max(0.0);
            out.set(0, gr, gc, mean);
            out.set(1, gr, gc, gx / n);
            out.set(2, gr, gc, gy / n);
            out.set(3, gr, gc, var.sqrt());
            out.set(4, gr, gc, hi - lo);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_flat_stats() {
        let image = FeatureMap::from_fn(1, 16, 16, |_, _, _| 0.3);
        let f = extract_features(&image).unwrap();
        assert_eq!(f.shape(), (STEM_CHANNELS, 4, 4));
        for r in 0..4 {
            for c in 0..4 {
                assert!((f.get(0, r, c) - 0.3).abs() < 1e-12);
                assert_eq!(f.get(1, r, c), 0.0);
                assert_eq!(f.get(2, r, c), 0.0);
                assert!(f.get(3, r, c).abs() < 1e-7);
                assert_eq!(f.get(4, r, c), 0.0);
            }
        }
    }

    #[test]
    fn vertical_edge_shows_in_horizontal_gradient() {
        let image = FeatureMap::from_fn(1, 8, 8, |_, _, c| if c < 4 { 0.0 } else { 1.0 });
        let f = extract_features(&image).unwrap();
        // The edge sits between the two patch columns.
        assert!(f.get(1, 0, 0) > 0.0 || f.get(1, 0, 1) > 0.0);
        assert_eq!(f.get(2, 0, 0), 0.0);
        assert_eq!(f.get(0, 0, 0), 0.0);
        assert_eq!(f.get(0, 0, 1), 1.0);
    }

    #[test]
    fn rejects_unaligned_image() {
        let image = FeatureMap::zeros(1, 10, 16);
        assert!(extract_features(&image).is_err());
    }
}

//! Comparison fusions for the regression ablation: depth-wise correlation
//! and pixel-correlation-guided spatial attention. Both preserve the
//! search feature's shape so the same regression head runs downstream.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TregError};
use crate::tensor::FeatureMap;

/// Which target-integration mechanism feeds the regression head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    /// Target-aware transformer over the template queue.
    #[default]
    #[serde(rename = "tat")]
    TargetAwareTransformer,
    /// Per-channel correlation against a single template.
    #[serde(rename = "dwcorr")]
    DepthwiseCorrelation,
    /// Cosine-similarity spatial attention against a single template.
    #[serde(rename = "pcorr")]
    PixelCorrAttention,
    /// Raw search features.
    #[serde(rename = "none")]
    NoFusion,
}

impl FusionKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tat" => Ok(FusionKind::TargetAwareTransformer),
            "dwcorr" => Ok(FusionKind::DepthwiseCorrelation),
            "pcorr" => Ok(FusionKind::PixelCorrAttention),
            "none" => Ok(FusionKind::NoFusion),
            other => Err(TregError::Config(format!(
                "unknown fusion '{other}' (expected tat|dwcorr|pcorr|none)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FusionKind::TargetAwareTransformer => "tat",
            FusionKind::DepthwiseCorrelation => "dwcorr",
            FusionKind::PixelCorrAttention => "pcorr",
            FusionKind::NoFusion => "none",
        }
    }
}

/// Per-channel valid cross-correlation of `search` with `template`,
/// zero-padded back to the search's spatial size so downstream heads stay
/// shape-compatible.
pub fn depthwise_correlation(search: &FeatureMap, template: &FeatureMap) -> Result<FeatureMap> {
    if search.channels() != template.channels() {
        return Err(TregError::shape(
            format!("{} channels", search.channels()),
            format!("template {}", template.shape_str()),
        ));
    }
    let (c, h, w) = search.shape();
    let (kh, kw) = (template.height(), template.width());
    if kh > h || kw > w {
        return Err(TregError::shape(
            format!("template no larger than {h}x{w}"),
            format!("{kh}x{kw}"),
        ));
    }
    let off_r = (kh - 1) / 2;
    let off_c = (kw - 1) / 2;
    let mut out = FeatureMap::zeros(c, h, w);
    for ch in 0..c {
        for vr in 0..=(h - kh) {
            for vc in 0..=(w - kw) {
                let mut acc = 0.0;
                for fr in 0..kh {
                    for fc in 0..kw {
                        acc += template.get(ch, fr, fc) * search.get(ch, vr + fr, vc + fc);
                    }
                }
                out.set(ch, vr + off_r, vc + off_c, acc);
            }
        }
    }
    Ok(out)
}

/// Spatial attention from pixel-wise correlation: each search cell is
/// scaled by the maximum cosine similarity between its feature vector and
/// any template cell, clamped to [0, 1].
pub fn pixel_corr_attention(search: &FeatureMap, template: &FeatureMap) -> Result<FeatureMap> {
    if search.channels() != template.channels() {
        return Err(TregError::shape(
            format!("{} channels", search.channels()),
            format!("template {}", template.shape_str()),
        ));
    }
    let (c, h, w) = search.shape();
    // Pre-normalize template cells.
    let t_cells = template.height() * template.width();
    let mut t_norm = vec![0.0; t_cells * c];
    let mut cell = vec![0.0; c];
    let mut idx = 0;
    for tr in 0..template.height() {
        for tc in 0..template.width() {
            template.cell_into(tr, tc, &mut cell);
            let norm = cell.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (slot, v) in t_norm[idx * c..(idx + 1) * c].iter_mut().zip(&cell) {
                *slot = if norm > 0.0 { v / norm } else { 0.0 };
            }
            idx += 1;
        }
    }
    let mut out = FeatureMap::zeros(c, h, w);
    for r in 0..h {
        for col in 0..w {
            search.cell_into(r, col, &mut cell);
            let norm = cell.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut weight: f64 = 0.0;
            if norm > 0.0 {
                for t in 0..t_cells {
                    let mut cos = 0.0;
                    for (ch, v) in cell.iter().enumerate() {
                        cos += (v / norm) * t_norm[t * c + ch];
                    }
                    weight = weight.max(cos);
                }
            }
            let weight = weight.clamp(0.0, 1.0);
            for ch in 0..c {
                out.set(ch, r, col, cell[ch] * weight);
            }
        }
    }
    Ok(out)
}

/// Raw attention weights of [`pixel_corr_attention`] before features are
/// scaled: max cosine similarity per position, clamped to [0, 1].
pub fn pixel_corr_weights(search: &FeatureMap, template: &FeatureMap) -> Result<FeatureMap> {
    let scaled = pixel_corr_attention(search, template)?;
    let (c, h, w) = search.shape();
    let mut out = FeatureMap::zeros(1, h, w);
    for r in 0..h {
        for col in 0..w {
            // Recover the weight from any channel with a nonzero feature.
            let mut weight = 0.0;
            for ch in 0..c {
                let orig = search.get(ch, r, col);
                if orig != 0.0 {
                    weight = scaled.get(ch, r, col) / orig;
                    break;
                }
            }
            out.set(0, r, col, weight);
        }
    }
    Ok(out)
}

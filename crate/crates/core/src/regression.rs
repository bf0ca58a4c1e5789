//! Anchor-free box regression: per-position boundary offsets, box
//! decoding, IoU loss, and the radius-limited training targets.

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::classifier::ScoreMap;
use crate::error::{Result, TregError};
use crate::tensor::{FeatureMap, PointwiseLinear};

/// Mapping from feature-grid positions to image coordinates: grid position
/// (row, col) sits at image point `(origin_x + stride * col,
/// origin_y + stride * row)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub stride: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl GridGeometry {
    pub fn new(stride: f64) -> Self {
        GridGeometry { stride, origin_x: stride / 2.0, origin_y: stride / 2.0 }
    }

    pub fn image_point(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + self.stride * col as f64,
            self.origin_y + self.stride * row as f64,
        )
    }

    /// Grid position nearest an image point, clamped into the grid.
    pub fn nearest_cell(&self, x: f64, y: f64, grid_h: usize, grid_w: usize) -> (usize, usize) {
        let col = ((x - self.origin_x) / self.stride).round();
        let row = ((y - self.origin_y) / self.stride).round();
        (
            row.clamp(0.0, grid_h as f64 - 1.0) as usize,
            col.clamp(0.0, grid_w as f64 - 1.0) as usize,
        )
    }

    /// Converts an image-coordinate box to the feature grid's own cell
    /// coordinates (for ROI pooling on feature maps).
    pub fn box_to_grid(&self, b: &BBox) -> Result<BBox> {
        BBox::new(
            (b.cx - self.origin_x) / self.stride + 0.5,
            (b.cy - self.origin_y) / self.stride + 0.5,
            b.w / self.stride,
            b.h / self.stride,
        )
    }
}

impl Default for GridGeometry {
    fn default() -> Self {
        GridGeometry::new(4.0)
    }
}

/// 4-channel map of strictly positive boundary distances. Channel order is
/// (left, top, right, bottom), in image pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetMap(FeatureMap);

impl OffsetMap {
    pub fn new(map: FeatureMap) -> Result<Self> {
        if map.channels() != 4 {
            return Err(TregError::shape("4 channels", map.shape_str()));
        }
        Ok(OffsetMap(map))
    }

    pub fn map(&self) -> &FeatureMap {
        &self.0
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.0.height(), self.0.width())
    }

    /// (left, top, right, bottom) at one grid position.
    pub fn at(&self, row: usize, col: usize) -> [f64; 4] {
        [
            self.0.get(0, row, col),
            self.0.get(1, row, col),
            self.0.get(2, row, col),
            self.0.get(3, row, col),
        ]
    }
}

/// Feed-forward offset head: three pointwise layers with ReLU between them
/// and an exponential on the output, so every predicted distance is
/// positive.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionHead {
    pub layer1: PointwiseLinear,
    pub layer2: PointwiseLinear,
    pub layer3: PointwiseLinear,
}

/// Intermediate activations kept for the backward pass.
pub struct HeadTrace {
    pre1: FeatureMap,
    act1: FeatureMap,
    pre2: FeatureMap,
    act2: FeatureMap,
    offsets: OffsetMap,
}

impl HeadTrace {
    pub fn offsets(&self) -> &OffsetMap {
        &self.offsets
    }
}

/// Gradients of the head parameters and its input.
pub struct HeadGrads {
    pub d_layer1_w: Vec<f64>,
    pub d_layer1_b: Vec<f64>,
    pub d_layer2_w: Vec<f64>,
    pub d_layer2_b: Vec<f64>,
    pub d_layer3_w: Vec<f64>,
    pub d_layer3_b: Vec<f64>,
    pub d_input: FeatureMap,
}

fn relu(map: &FeatureMap) -> FeatureMap {
    let mut out = map.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

impl RegressionHead {
    pub fn new(layer1: PointwiseLinear, layer2: PointwiseLinear, layer3: PointwiseLinear) -> Result<Self> {
        if layer2.in_channels() != layer1.out_channels()
            || layer3.in_channels() != layer2.out_channels()
        {
            return Err(TregError::shape(
                "chained layer widths",
                format!(
                    "{}->{}, {}->{}, {}->{}",
                    layer1.in_channels(),
                    layer1.out_channels(),
                    layer2.in_channels(),
                    layer2.out_channels(),
                    layer3.in_channels(),
                    layer3.out_channels()
                ),
            ));
        }
        if layer3.out_channels() != 4 {
            return Err(TregError::shape(
                "4 output channels",
                format!("{}", layer3.out_channels()),
            ));
        }
        Ok(RegressionHead { layer1, layer2, layer3 })
    }

    pub fn in_channels(&self) -> usize {
        self.layer1.in_channels()
    }

    pub fn forward(&self, feature: &FeatureMap) -> Result<HeadTrace> {
        let pre1 = self.layer1.apply(feature)?;
        let act1 = relu(&pre1);
        let pre2 = self.layer2.apply(&act1)?;
        let act2 = relu(&pre2);
        let mut raw = self.layer3.apply(&act2)?;
        for v in raw.data_mut() {
            *v = v.exp();
        }
        Ok(HeadTrace { pre1, act1, pre2, act2, offsets: OffsetMap::new(raw)? })
    }

    /// Backward through exp, the three layers, and both ReLUs.
    /// `d_offsets` is the upstream gradient w.r.t. the (post-exp) offsets.
    pub fn backward(
        &self,
        feature: &FeatureMap,
        trace: &HeadTrace,
        d_offsets: &FeatureMap,
    ) -> Result<HeadGrads> {
        // d(pre-exp) = d(offset) * offset
        let mut d_raw = d_offsets.clone();
        for (g, o) in d_raw.data_mut().iter_mut().zip(trace.offsets.map().data()) {
            *g *= o;
        }
        let tape3 = self.layer3.backward(&trace.act2, &d_raw)?;
        let mut d_act2 = tape3.d_input;
        for (g, pre) in d_act2.data_mut().iter_mut().zip(trace.pre2.data()) {
            if *pre <= 0.0 {
                *g = 0.0;
            }
        }
        let tape2 = self.layer2.backward(&trace.act1, &d_act2)?;
        let mut d_act1 = tape2.d_input;
        for (g, pre) in d_act1.data_mut().iter_mut().zip(trace.pre1.data()) {
            if *pre <= 0.0 {
                *g = 0.0;
            }
        }
        let tape1 = self.layer1.backward(feature, &d_act1)?;
        Ok(HeadGrads {
            d_layer1_w: tape1.d_weights,
            d_layer1_b: tape1.d_bias.unwrap_or_default(),
            d_layer2_w: tape2.d_weights,
            d_layer2_b: tape2.d_bias.unwrap_or_default(),
            d_layer3_w: tape3.d_weights,
            d_layer3_b: tape3.d_bias.unwrap_or_default(),
            d_input: tape1.d_input,
        })
    }
}

/// Predicts the boundary-offset map from a fused feature map.
pub fn predict_offsets(head: &RegressionHead, feature: &FeatureMap) -> Result<OffsetMap> {
    Ok(head.forward(feature)?.offsets)
}

/// Decodes the box at one grid position: with image point p and offsets
/// (l, t, r, b), the corners are `(p.x - l, p.y - t)` and `(p.x + r, p.y + b)`.
pub fn decode_box(
    offsets: &OffsetMap,
    row: usize,
    col: usize,
    geom: &GridGeometry,
) -> Result<BBox> {
    let (gh, gw) = offsets.grid();
    if row >= gh || col >= gw {
        return Err(TregError::Precondition(format!(
            "position ({row},{col}) outside {gh}x{gw} grid"
        )));
    }
    let (px, py) = geom.image_point(row, col);
    let [l, t, r, b] = offsets.at(row, col);
    BBox::from_corners(px - l, py - t, px + r, py + b)
}

/// Intersection area over union area, in [0, 1].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Which IoU loss to optimize.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouLossKind {
    /// `1 - IoU`, bounded in [0, 1].
    #[default]
    OneMinus,
    /// `-ln(IoU)`, unbounded as overlap vanishes.
    NegLog,
}

/// IoU loss of a predicted box against a ground-truth box, together with
/// the gradient with respect to the prediction's (l, t, r, b) offsets at
/// the decoding point. The subgradient is zero at the non-smooth overlap
/// boundary and everywhere the boxes are disjoint.
pub fn iou_loss(pred: &BBox, gt: &BBox, kind: IouLossKind) -> (f64, [f64; 4]) {
    let (px1, py1, px2, py2) = pred.corners();
    let (gx1, gy1, gx2, gy2) = gt.corners();
    let iw = (px2.min(gx2) - px1.max(gx1)).max(0.0);
    let ih = (py2.min(gy2) - py1.max(gy1)).max(0.0);
    let inter = iw * ih;
    let pa = pred.area();
    let union = pa + gt.area() - inter;
    let iou_v = inter / union;

    // d(inter)/d(corner): the moving corner only matters when it is the
    // binding side of the overlap and the overlap is non-degenerate.
    let (mut di_x1, mut di_y1, mut di_x2, mut di_y2) = (0.0, 0.0, 0.0, 0.0);
    if iw > 0.0 && ih > 0.0 {
        if px1 > gx1 {
            di_x1 = -ih;
        }
        if px2 < gx2 {
            di_x2 = ih;
        }
        if py1 > gy1 {
            di_y1 = -iw;
        }
        if py2 < gy2 {
            di_y2 = iw;
        }
    }
    // d(pred area)/d(corner)
    let (ph, pw) = (py2 - py1, px2 - px1);
    let da = [-ph, -pw, ph, pw];
    let di = [di_x1, di_y1, di_x2, di_y2];

    // d(iou)/d(corner) = (dI * U - I * (dA - dI)) / U^2
    let mut d_iou = [0.0; 4];
    for k in 0..4 {
        let du = da[k] - di[k];
        d_iou[k] = (di[k] * union - inter * du) / (union * union);
    }

    let (loss, scale) = match kind {
        IouLossKind::OneMinus => (1.0 - iou_v, -1.0),
        IouLossKind::NegLog => {
            // Clamp so a zero-overlap prediction yields a large finite loss.
            let safe = iou_v.max(1e-12);
            (-safe.ln(), -1.0 / safe)
        }
    };
    // Corners to offsets at the decode point: x1 = px - l, y1 = py - t,
    // x2 = px + r, y2 = py + b.
    let d_offsets = [
        -scale * d_iou[0],
        -scale * d_iou[1],
        scale * d_iou[2],
        scale * d_iou[3],
    ];
    (loss, d_offsets)
}

/// Grid positions within Chebyshev distance `radius` of `center`, each
/// paired with the exact (l, t, r, b) distances from its image point to
/// the ground-truth box edges. Positions whose image point falls outside
/// the box are dropped.
pub fn training_targets(
    gt: &BBox,
    center: (usize, usize),
    radius: usize,
    geom: &GridGeometry,
    grid_h: usize,
    grid_w: usize,
) -> Result<Vec<((usize, usize), [f64; 4])>> {
    let (cr, cc) = center;
    if cr >= grid_h || cc >= grid_w {
        return Err(TregError::Precondition(format!(
            "center ({cr},{cc}) outside {grid_h}x{grid_w} grid"
        )));
    }
    let (x1, y1, x2, y2) = gt.corners();
    let r_lo = cr.saturating_sub(radius);
    let r_hi = (cr + radius).min(grid_h - 1);
    let c_lo = cc.saturating_sub(radius);
    let c_hi = (cc + radius).min(grid_w - 1);
    let mut out = Vec::new();
    for row in r_lo..=r_hi {
        for col in c_lo..=c_hi {
            let (px, py) = geom.image_point(row, col);
            if px < x1 || px > x2 || py < y1 || py > y2 {
                continue;
            }
            out.push(((row, col), [px - x1, py - y1, x2 - px, y2 - py]));
        }
    }
    Ok(out)
}

/// How per-position predictions aggregate into the final box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferMode {
    /// Decode at the classification argmax.
    #[default]
    Argmax,
    /// Average decoded corners over the radius-2 neighborhood of the
    /// argmax, softmax-weighted by classification scores.
    WeightedAverage,
}

/// Aggregates an offset map and a score map into one box.
pub fn infer_box(
    offsets: &OffsetMap,
    score: &ScoreMap,
    geom: &GridGeometry,
    mode: InferMode,
) -> Result<BBox> {
    let (gh, gw) = offsets.grid();
    if score.map().height() != gh || score.map().width() != gw {
        return Err(TregError::shape(
            format!("score grid {gh}x{gw}"),
            score.map().shape_str(),
        ));
    }
    let (peak, _) = score.argmax();
    match mode {
        InferMode::Argmax => decode_box(offsets, peak.0, peak.1, geom),
        InferMode::WeightedAverage => {
            let radius = 2usize;
            let r_lo = peak.0.saturating_sub(radius);
            let r_hi = (peak.0 + radius).min(gh - 1);
            let c_lo = peak.1.saturating_sub(radius);
            let c_hi = (peak.1 + radius).min(gw - 1);
            // Softmax over the neighborhood; uniform scores give the plain
            // mean of decoded corners.
            let mut max_s = f64::NEG_INFINITY;
            for row in r_lo..=r_hi {
                for col in c_lo..=c_hi {
                    max_s = max_s.max(score.map().get(0, row, col));
                }
            }
            let mut wsum = 0.0;
            let mut acc = [0.0; 4];
            for row in r_lo..=r_hi {
                for col in c_lo..=c_hi {
                    let wgt = (score.map().get(0, row, col) - max_s).exp();
                    let b = decode_box(offsets, row, col, geom)?;
                    let (x1, y1, x2, y2) = b.corners();
                    acc[0] += wgt * x1;
                    acc[1] += wgt * y1;
                    acc[2] += wgt * x2;
                    acc[3] += wgt * y2;
                    wsum += wgt;
                }
            }
            BBox::from_corners(acc[0] / wsum, acc[1] / wsum, acc[2] / wsum, acc[3] / wsum)
        }
    }
}

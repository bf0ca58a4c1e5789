//! Dense tensor primitives with exact forward/backward semantics.
//!
//! Everything here is a pure function over immutable inputs. Accumulation is
//! row-major and sequential, so results are bit-reproducible per platform.

use crate::bbox::BBox;
use crate::error::{Result, TregError};

/// Dense real-valued grid: `channels x height x width`, row-major in
/// (channel, row, column) order. The channel vector at one (row, column) is
/// one feature cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(TregError::Precondition(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(TregError::shape(
                format!("{} values for {channels}x{height}x{width}", channels * height * width),
                format!("{} values", data.len()),
            ));
        }
        Ok(FeatureMap { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(c, r, col));
                }
            }
        }
        FeatureMap { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }

    #[inline]
    pub fn idx(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.height + r) * self.width + col
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f64) {
        let i = self.idx(c, r, col);
        self.data[i] = v;
    }

    #[inline]
    pub fn add_at(&mut self, c: usize, r: usize, col: usize, v: f64) {
        let i = self.idx(c, r, col);
        self.data[i] += v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Copies the channel vector at (row, col) into `out`.
    pub fn cell_into(&self, r: usize, col: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        for (c, slot) in out.iter_mut().enumerate() {
            *slot = self.data[(c * self.height + r) * self.width + col];
        }
    }

    pub fn cell(&self, r: usize, col: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.cell_into(r, col, &mut out);
        out
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.shape() == other.shape()
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                let w = self.width;
                let h = self.height;
                let c = i / (h * w);
                let r = (i / w) % h;
                let col = i % w;
                return Err(TregError::Numeric(format!(
                    "{what}[{c},{r},{col}] = {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> FeatureMap {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= s;
        }
        out
    }

    pub fn add_scaled(&mut self, other: &FeatureMap, s: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }
}

/// Per-cell linear map (a 1x1 convolution): every output cell vector is
/// `weights . input cell vector`, plus bias when present. Applied over a
/// template stack, the same map acts on every cell of every entry, which is
/// also what a 1x1x1 kernel over the stacked dimension computes.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseLinear {
    out_channels: usize,
    in_channels: usize,
    /// Row-major `out_channels x in_channels`.
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
}

impl PointwiseLinear {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return Err(TregError::Precondition(
                "pointwise layer needs positive channel counts".into(),
            ));
        }
        if weights.len() != out_channels * in_channels {
            return Err(TregError::shape(
                format!("{out_channels}x{in_channels} weights"),
                format!("{} values", weights.len()),
            ));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(TregError::shape(
                    format!("bias of length {out_channels}"),
                    format!("length {}", b.len()),
                ));
            }
        }
        Ok(PointwiseLinear { out_channels, in_channels, weights, bias })
    }

    pub fn identity(channels: usize) -> Self {
        let mut weights = vec![0.0; channels * channels];
        for i in 0..channels {
            weights[i * channels + i] = 1.0;
        }
        PointwiseLinear { out_channels: channels, in_channels: channels, weights, bias: None }
    }

    pub fn zeros(out_channels: usize, in_channels: usize, with_bias: bool) -> Self {
        PointwiseLinear {
            out_channels,
            in_channels,
            weights: vec![0.0; out_channels * in_channels],
            bias: if with_bias { Some(vec![0.0; out_channels]) } else { None },
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn has_bias(&self) -> bool {
        self.bias.is_some()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut [f64]> {
        self.bias.as_deref_mut()
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize) -> f64 {
        self.weights[o * self.in_channels + i]
    }

    /// Applies the map to a single cell vector.
    pub fn apply_cell(&self, cell: &[f64], out: &mut [f64]) {
        debug_assert_eq!(cell.len(), self.in_channels);
        debug_assert_eq!(out.len(), self.out_channels);
        for o in 0..self.out_channels {
            let row = &self.weights[o * self.in_channels..(o + 1) * self.in_channels];
            let mut acc = match &self.bias {
                Some(b) => b[o],
                None => 0.0,
            };
            for (w, x) in row.iter().zip(cell.iter()) {
                acc += w * x;
            }
            out[o] = acc;
        }
    }

    /// Forward pass over a whole map. Height and width are preserved.
    pub fn apply(&self, map: &FeatureMap) -> Result<FeatureMap> {
        if map.channels() != self.in_channels {
            return Err(TregError::shape(
                format!("{} input channels", self.in_channels),
                map.shape_str(),
            ));
        }
        let (h, w) = (map.height(), map.width());
        let mut out = FeatureMap::zeros(self.out_channels, h, w);
        let mut cell = vec![0.0; self.in_channels];
        let mut mapped = vec![0.0; self.out_channels];
        for r in 0..h {
            for col in 0..w {
                map.cell_into(r, col, &mut cell);
                self.apply_cell(&cell, &mut mapped);
                for (o, v) in mapped.iter().enumerate() {
                    out.set(o, r, col, *v);
                }
            }
        }
        Ok(out)
    }

    /// Chain-rule gradients for weights, bias, and input given the upstream
    /// gradient of the loss with respect to this layer's output.
    pub fn backward(&self, input: &FeatureMap, upstream: &FeatureMap) -> Result<GradTape> {
        if input.channels() != self.in_channels {
            return Err(TregError::shape(
                format!("{} input channels", self.in_channels),
                input.shape_str(),
            ));
        }
        let expected = (self.out_channels, input.height(), input.width());
        if upstream.shape() != expected {
            return Err(TregError::shape(
                format!("{}x{}x{}", expected.0, expected.1, expected.2),
                upstream.shape_str(),
            ));
        }
        let (h, w) = (input.height(), input.width());
        let mut d_weights = vec![0.0; self.out_channels * self.in_channels];
        let mut d_bias = self.bias.as_ref().map(|_| vec![0.0; self.out_channels]);
        let mut d_input = FeatureMap::zeros(self.in_channels, h, w);
        let mut x = vec![0.0; self.in_channels];
        let mut u = vec![0.0; self.out_channels];
        for r in 0..h {
            for col in 0..w {
                input.cell_into(r, col, &mut x);
                upstream.cell_into(r, col, &mut u);
                for o in 0..self.out_channels {
                    let uo = u[o];
                    let wrow = o * self.in_channels;
                    for i in 0..self.in_channels {
                        d_weights[wrow + i] += uo * x[i];
                        d_input.add_at(i, r, col, self.weights[wrow + i] * uo);
                    }
                    if let Some(db) = &mut d_bias {
                        db[o] += uo;
                    }
                }
            }
        }
        Ok(GradTape { d_weights, d_bias, d_input })
    }
}

/// Gradient buffers produced by a pointwise backward pass. Buffer shapes
/// match the parameter shapes exactly.
#[derive(Clone, Debug)]
pub struct GradTape {
    pub d_weights: Vec<f64>,
    pub d_bias: Option<Vec<f64>>,
    pub d_input: FeatureMap,
}

/// Assignment of map cells to the `out x out` bins of one pooled region.
/// `bins[b]` holds the (row, col) cells whose centers fall in bin `b`;
/// `fallback[b]` is the covered cell an empty bin borrows its value from.
struct RoiBins {
    out: usize,
    bins: Vec<Vec<(usize, usize)>>,
    fallback: Vec<Option<(usize, usize)>>,
}

fn roi_bins(map: &FeatureMap, bbox: &BBox, out: usize) -> Result<RoiBins> {
    let (x1, y1, x2, y2) = bbox.corners();
    let (h, w) = (map.height() as f64, map.width() as f64);
    if x2 <= 0.0 || y2 <= 0.0 || x1 >= w || y1 >= h {
        return Err(TregError::OutOfBounds(format!(
            "box ({x1:.2},{y1:.2})-({x2:.2},{y2:.2}) outside {}x{} map",
            map.height(),
            map.width()
        )));
    }
    let bw = (x2 - x1) / out as f64;
    let bh = (y2 - y1) / out as f64;

    // Covered cells: centers inside both the box and the map.
    let r_lo = (y1 - 0.5).ceil().max(0.0) as usize;
    let r_hi = ((y2 - 0.5).floor().min(h - 1.0)).max(0.0) as usize;
    let c_lo = (x1 - 0.5).ceil().max(0.0) as usize;
    let c_hi = ((x2 - 0.5).floor().min(w - 1.0)).max(0.0) as usize;

    let mut bins = vec![Vec::new(); out * out];
    let mut covered: Vec<(usize, usize)> = Vec::new();
    for r in r_lo..=r_hi {
        let cy = r as f64 + 0.5;
        if cy < y1 || cy > y2 {
            continue;
        }
        for col in c_lo..=c_hi {
            let cx = col as f64 + 0.5;
            if cx < x1 || cx > x2 {
                continue;
            }
            covered.push((r, col));
            let mut bx = ((cx - x1) / bw).floor() as isize;
            let mut by = ((cy - y1) / bh).floor() as isize;
            bx = bx.clamp(0, out as isize - 1);
            by = by.clamp(0, out as isize - 1);
            bins[by as usize * out + bx as usize].push((r, col));
        }
    }
    if covered.is_empty() {
        // Box intersects the map but covers no cell center; treat the
        // in-bounds cell nearest the box center as covered.
        let r = (bbox.cy - 0.5).round().clamp(0.0, h - 1.0) as usize;
        let col = (bbox.cx - 0.5).round().clamp(0.0, w - 1.0) as usize;
        covered.push((r, col));
    }

    let mut fallback = vec![None; out * out];
    for by in 0..out {
        for bx in 0..out {
            let b = by * out + bx;
            if !bins[b].is_empty() {
                continue;
            }
            let bcx = x1 + (bx as f64 + 0.5) * bw;
            let bcy = y1 + (by as f64 + 0.5) * bh;
            let mut best = covered[0];
            let mut best_d = f64::INFINITY;
            for &(r, col) in &covered {
                let d = (col as f64 + 0.5 - bcx).powi(2) + (r as f64 + 0.5 - bcy).powi(2);
                if d < best_d {
                    best_d = d;
                    best = (r, col);
                }
            }
            fallback[b] = Some(best);
        }
    }
    Ok(RoiBins { out, bins, fallback })
}

/// Average-pools the region `bbox` of `map` onto an `out_size x out_size`
/// grid. Bins partition the box uniformly; each output bin is the mean of
/// the map cells whose centers fall in that bin, and a bin that covers no
/// cell center takes the nearest covered cell's value. The box is given in
/// the map's own cell coordinates (cell (r, c) spans `[c, c+1] x [r, r+1]`).
pub fn roi_pool(map: &FeatureMap, bbox: &BBox, out_size: usize) -> Result<FeatureMap> {
    if out_size == 0 {
        return Err(TregError::Precondition("out_size must be >= 1".into()));
    }
    let layout = roi_bins(map, bbox, out_size)?;
    let out = layout.out;
    let mut pooled = FeatureMap::zeros(map.channels(), out, out);
    for by in 0..out {
        for bx in 0..out {
            let b = by * out + bx;
            let members = &layout.bins[b];
            if members.is_empty() {
                let (r, col) = layout.fallback[b].expect("empty bin has fallback");
                for c in 0..map.channels() {
                    pooled.set(c, by, bx, map.get(c, r, col));
                }
            } else {
                let n = members.len() as f64;
                for c in 0..map.channels() {
                    let mut acc = 0.0;
                    for &(r, col) in members {
                        acc += map.get(c, r, col);
                    }
                    pooled.set(c, by, bx, acc / n);
                }
            }
        }
    }
    Ok(pooled)
}

/// Adjoint of [`roi_pool`]: routes the upstream gradient back onto the map.
/// Cells of a populated bin each receive `upstream / bin_count`; an empty
/// bin routes its whole gradient to the fallback cell.
pub fn roi_pool_backward(
    map: &FeatureMap,
    bbox: &BBox,
    out_size: usize,
    upstream: &FeatureMap,
) -> Result<FeatureMap> {
    if upstream.shape() != (map.channels(), out_size, out_size) {
        return Err(TregError::shape(
            format!("{}x{}x{}", map.channels(), out_size, out_size),
            upstream.shape_str(),
        ));
    }
    let layout = roi_bins(map, bbox, out_size)?;
    let mut d_map = FeatureMap::zeros(map.channels(), map.height(), map.width());
    for by in 0..out_size {
        for bx in 0..out_size {
            let b = by * out_size + bx;
            let members = &layout.bins[b];
            if members.is_empty() {
                let (r, col) = layout.fallback[b].expect("empty bin has fallback");
                for c in 0..map.channels() {
                    d_map.add_at(c, r, col, upstream.get(c, by, bx));
                }
            } else {
                let n = members.len() as f64;
                for c in 0..map.channels() {
                    let u = upstream.get(c, by, bx) / n;
                    for &(r, col) in members {
                        d_map.add_at(c, r, col, u);
                    }
                }
            }
        }
    }
    Ok(d_map)
}

/// Central-difference gradient estimate of a scalar function:
/// `(f(p + eps) - f(p - eps)) / (2 eps)` per parameter entry.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; params.len()];
    let mut scratch = params.to_vec();
    for i in 0..params.len() {
        scratch[i] = params[i] + eps;
        let plus = f(&scratch);
        scratch[i] = params[i] - eps;
        let minus = f(&scratch);
        scratch[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(TregError::Numeric(format!(
                "finite_diff_grad: f non-finite at entry {i} (f+={plus}, f-={minus})"
            )));
        }
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// `|a - b| <= atol + rtol * max(|a|, |b|)`.
pub fn close(a: f64, b: f64, rtol: f64, atol: f64) -> bool {
    (a - b).abs() <= atol + rtol * a.abs().max(b.abs())
}

/// Dot product of two equally shaped maps (row-major accumulation).
pub fn map_dot(a: &FeatureMap, b: &FeatureMap) -> f64 {
    debug_assert!(a.same_shape(b));
    let mut acc = 0.0;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        acc += x * y;
    }
    acc
}

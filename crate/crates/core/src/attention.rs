//! Target-aware cross-attention over a template queue.
//!
//! Every search-region cell queries every template cell; the affinity-
//! weighted value vectors are averaged over the whole queue (scaled by
//! 1/N, N = entries x cell rows x cell cols), passed through the output
//! transform, and added back onto the search feature. The 1/N mean keeps a
//! cell with zero affinity to every template cell untouched, which a
//! softmax weighting cannot do.
//!
//! Summation order: cells within one queue entry accumulate sequentially in
//! row-major order; the per-entry partial sums are then combined by a
//! split-at-half pairwise reduction. Repeating the whole queue a
//! power-of-two number of times therefore reproduces the output bit for
//! bit.

use crate::error::{Result, TregError};
use crate::tensor::{FeatureMap, PointwiseLinear};

/// The four learned maps of the attention block. Encoders are bias-free,
/// so zero affinity means an exact residual pass-through.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// Query encoder, C -> D, applied to search cells.
    pub query_enc: PointwiseLinear,
    /// Key encoder, C -> D, applied to template cells.
    pub key_enc: PointwiseLinear,
    /// Value encoder, C -> D, applied to template cells.
    pub value_enc: PointwiseLinear,
    /// Output transform, D -> C, applied to the aggregated value.
    pub output: PointwiseLinear,
    /// When set, the result is the average (not the sum) of the transformed
    /// aggregate and the original feature.
    pub average_residual: bool,
}

impl AttentionParams {
    pub fn new(
        query_enc: PointwiseLinear,
        key_enc: PointwiseLinear,
        value_enc: PointwiseLinear,
        output: PointwiseLinear,
    ) -> Result<Self> {
        for (name, l) in [
            ("query encoder", &query_enc),
            ("key encoder", &key_enc),
            ("value encoder", &value_enc),
            ("output transform", &output),
        ] {
            if l.has_bias() {
                return Err(TregError::Precondition(format!(
                    "{name} must be bias-free"
                )));
            }
        }
        if query_enc.out_channels() != key_enc.out_channels() {
            return Err(TregError::shape(
                format!("key encoder out = {}", query_enc.out_channels()),
                format!("{}", key_enc.out_channels()),
            ));
        }
        let c = query_enc.in_channels();
        if key_enc.in_channels() != c || value_enc.in_channels() != c {
            return Err(TregError::shape(
                format!("all encoders take {c} channels"),
                format!(
                    "key {}, value {}",
                    key_enc.in_channels(),
                    value_enc.in_channels()
                ),
            ));
        }
        if output.in_channels() != value_enc.out_channels() {
            return Err(TregError::shape(
                format!("output transform in = {}", value_enc.out_channels()),
                format!("{}", output.in_channels()),
            ));
        }
        if output.out_channels() != c {
            return Err(TregError::shape(
                format!("output transform out = {c}"),
                format!("{}", output.out_channels()),
            ));
        }
        Ok(AttentionParams {
            query_enc,
            key_enc,
            value_enc,
            output,
            average_residual: false,
        })
    }

    /// Feature channel count C this block operates on.
    pub fn channels(&self) -> usize {
        self.query_enc.in_channels()
    }

    /// Embedding width D shared by the query and key encoders.
    pub fn embed_dim(&self) -> usize {
        self.query_enc.out_channels()
    }

    /// Default embedding width for a given channel count: C/2 with a floor
    /// of 8.
    pub fn default_embed_dim(channels: usize) -> usize {
        (channels / 2).max(8)
    }
}

/// An ordered stack of equally shaped template feature patches, the key and
/// value source of the attention block. N = count x height x width.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedTemplates {
    entries: Vec<FeatureMap>,
    total_cells: usize,
}

impl StackedTemplates {
    pub fn new(entries: Vec<FeatureMap>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| TregError::Precondition("template queue is empty".into()))?;
        let shape = first.shape();
        for (i, e) in entries.iter().enumerate() {
            if e.shape() != shape {
                return Err(TregError::shape(
                    format!("entry 0 is {}", first.shape_str()),
                    format!("entry {i} is {}", e.shape_str()),
                ));
            }
        }
        let total_cells = entries.len() * shape.1 * shape.2;
        Ok(StackedTemplates { entries, total_cells })
    }

    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn channels(&self) -> usize {
        self.entries[0].channels()
    }

    pub fn cell_rows(&self) -> usize {
        self.entries[0].height()
    }

    pub fn cell_cols(&self) -> usize {
        self.entries[0].width()
    }

    /// Total number of template cells N.
    pub fn total_cells(&self) -> usize {
        self.total_cells
    }

    pub fn entries(&self) -> &[FeatureMap] {
        &self.entries
    }

    /// The templates with the whole stack repeated `m` times.
    pub fn repeated(&self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(TregError::Precondition("repeat count must be >= 1".into()));
        }
        let mut entries = Vec::with_capacity(self.entries.len() * m);
        for _ in 0..m {
            entries.extend(self.entries.iter().cloned());
        }
        StackedTemplates::new(entries)
    }
}

/// Raw affinity between one search cell and one template cell: the dot
/// product of their query and key encodings. No nonlinearity, no
/// normalization.
pub fn affinity(query_cell: &[f64], key_cell: &[f64], params: &AttentionParams) -> Result<f64> {
    let c = params.channels();
    if query_cell.len() != c || key_cell.len() != c {
        return Err(TregError::shape(
            format!("cells of {c} channels"),
            format!("query {}, key {}", query_cell.len(), key_cell.len()),
        ));
    }
    let d = params.embed_dim();
    let mut q = vec![0.0; d];
    let mut k = vec![0.0; d];
    params.query_enc.apply_cell(query_cell, &mut q);
    params.key_enc.apply_cell(key_cell, &mut k);
    Ok(q.iter().zip(k.iter()).map(|(a, b)| a * b).sum())
}

/// Split-at-half pairwise sum of per-entry partial vectors, in place on a
/// scratch tree. `parts` must be non-empty.
fn pairwise_vec_sum(parts: &[Vec<f64>]) -> Vec<f64> {
    match parts {
        [one] => one.clone(),
        _ => {
            let mid = parts.len() / 2;
            let mut left = pairwise_vec_sum(&parts[..mid]);
            let right = pairwise_vec_sum(&parts[mid..]);
            for (a, b) in left.iter_mut().zip(right.iter()) {
                *a += *b;
            }
            left
        }
    }
}

fn pairwise_scalar_sum(parts: &[f64]) -> f64 {
    match parts {
        [one] => *one,
        _ => {
            let mid = parts.len() / 2;
            pairwise_scalar_sum(&parts[..mid]) + pairwise_scalar_sum(&parts[mid..])
        }
    }
}

fn check_transform_shapes(
    search: &FeatureMap,
    templates: &StackedTemplates,
    params: &AttentionParams,
) -> Result<()> {
    let c = params.channels();
    if search.channels() != c {
        return Err(TregError::shape(
            format!("search with {c} channels"),
            search.shape_str(),
        ));
    }
    if templates.channels() != c {
        return Err(TregError::shape(
            format!("templates with {c} channels"),
            format!("{} channels", templates.channels()),
        ));
    }
    Ok(())
}

/// Encoded template cells, flattened per entry in row-major order.
struct EncodedTemplates {
    /// keys[entry][cell * d .. (cell + 1) * d]
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    cells_per_entry: usize,
}

fn encode_templates(templates: &StackedTemplates, params: &AttentionParams) -> EncodedTemplates {
    let d = params.embed_dim();
    let dv = params.value_enc.out_channels();
    let cells = templates.cell_rows() * templates.cell_cols();
    let mut keys = Vec::with_capacity(templates.count());
    let mut values = Vec::with_capacity(templates.count());
    let mut cell = vec![0.0; templates.channels()];
    for entry in templates.entries() {
        let mut ek = vec![0.0; cells * d];
        let mut ev = vec![0.0; cells * dv];
        let mut idx = 0;
        for r in 0..entry.height() {
            for col in 0..entry.width() {
                entry.cell_into(r, col, &mut cell);
                params.key_enc.apply_cell(&cell, &mut ek[idx * d..(idx + 1) * d]);
                params
                    .value_enc
                    .apply_cell(&cell, &mut ev[idx * dv..(idx + 1) * dv]);
                idx += 1;
            }
        }
        keys.push(ek);
        values.push(ev);
    }
    EncodedTemplates { keys, values, cells_per_entry: cells }
}

/// The target-aware feature transformation. For every search position the
/// affinity-weighted template values are averaged over the queue, passed
/// through the output transform, and added to the original cell vector.
/// Output shape equals the search shape.
pub fn transform(
    search: &FeatureMap,
    templates: &StackedTemplates,
    params: &AttentionParams,
) -> Result<FeatureMap> {
    check_transform_shapes(search, templates, params)?;
    let (c, h, w) = search.shape();
    let d = params.embed_dim();
    let dv = params.value_enc.out_channels();
    let n = templates.total_cells() as f64;
    let enc = encode_templates(templates, params);

    let mut out = FeatureMap::zeros(c, h, w);
    let mut x = vec![0.0; c];
    let mut q = vec![0.0; d];
    let mut mapped = vec![0.0; c];
    let mut parts: Vec<Vec<f64>> = vec![vec![0.0; dv]; templates.count()];
    for r in 0..h {
        for col in 0..w {
            search.cell_into(r, col, &mut x);
            params.query_enc.apply_cell(&x, &mut q);
            for (entry, part) in parts.iter_mut().enumerate() {
                part.iter_mut().for_each(|v| *v = 0.0);
                let keys = &enc.keys[entry];
                let values = &enc.values[entry];
                for cell_idx in 0..enc.cells_per_entry {
                    let key = &keys[cell_idx * d..(cell_idx + 1) * d];
                    let mut a = 0.0;
                    for (qd, kd) in q.iter().zip(key.iter()) {
                        a += qd * kd;
                    }
                    let value = &values[cell_idx * dv..(cell_idx + 1) * dv];
                    for (p, v) in part.iter_mut().zip(value.iter()) {
                        *p += a * v;
                    }
                }
            }
            let mut agg = pairwise_vec_sum(&parts);
            for v in agg.iter_mut() {
                *v /= n;
            }
            params.output.apply_cell(&agg, &mut mapped);
            if params.average_residual {
                for ch in 0..c {
                    out.set(ch, r, col, 0.5 * (mapped[ch] + x[ch]));
                }
            } else {
                for ch in 0..c {
                    out.set(ch, r, col, mapped[ch] + x[ch]);
                }
            }
        }
    }
    Ok(out)
}

/// Single-channel diagnostic map: the 1/N-scaled sum of affinities from
/// each search position to every template cell.
pub fn attention_map(
    search: &FeatureMap,
    templates: &StackedTemplates,
    params: &AttentionParams,
) -> Result<FeatureMap> {
    check_transform_shapes(search, templates, params)?;
    let (_, h, w) = search.shape();
    let d = params.embed_dim();
    let n = templates.total_cells() as f64;
    let enc = encode_templates(templates, params);

    let mut out = FeatureMap::zeros(1, h, w);
    let mut x = vec![0.0; search.channels()];
    let mut q = vec![0.0; d];
    let mut parts = vec![0.0; templates.count()];
    for r in 0..h {
        for col in 0..w {
            search.cell_into(r, col, &mut x);
            params.query_enc.apply_cell(&x, &mut q);
            for (entry, part) in parts.iter_mut().enumerate() {
                let keys = &enc.keys[entry];
                let mut acc = 0.0;
                for cell_idx in 0..enc.cells_per_entry {
                    let key = &keys[cell_idx * d..(cell_idx + 1) * d];
                    let mut a = 0.0;
                    for (qd, kd) in q.iter().zip(key.iter()) {
                        a += qd * kd;
                    }
                    acc += a;
                }
                *part = acc;
            }
            out.set(0, r, col, pairwise_scalar_sum(&parts) / n);
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss through [`transform`].
#[derive(Clone, Debug)]
pub struct AttentionGrads {
    pub d_query_w: Vec<f64>,
    pub d_key_w: Vec<f64>,
    pub d_value_w: Vec<f64>,
    pub d_output_w: Vec<f64>,
    pub d_search: FeatureMap,
    pub d_templates: Vec<FeatureMap>,
}

/// Exact chain-rule gradients of `transform` with respect to all four
/// parameter matrices, the search feature, and every template entry. The
/// residual path contributes the identity to the search gradient.
pub fn transform_backward(
    search: &FeatureMap,
    templates: &StackedTemplates,
    params: &AttentionParams,
    upstream: &FeatureMap,
) -> Result<AttentionGrads> {
    check_transform_shapes(search, templates, params)?;
    if !upstream.same_shape(search) {
        return Err(TregError::shape(search.shape_str(), upstream.shape_str()));
    }
    let (c, h, w) = search.shape();
    let d = params.embed_dim();
    let dv = params.value_enc.out_channels();
    let n = templates.total_cells() as f64;
    let t = templates.count();
    let cells = templates.cell_rows() * templates.cell_cols();
    let enc = encode_templates(templates, params);
    // With the average variant both the transform path and the residual
    // carry a 1/2 factor.
    let path_scale = if params.average_residual { 0.5 } else { 1.0 };

    let mut d_query_w = vec![0.0; d * c];
    let mut d_key_w = vec![0.0; d * c];
    let mut d_value_w = vec![0.0; dv * c];
    let mut d_output_w = vec![0.0; c * dv];
    let mut d_search = FeatureMap::zeros(c, h, w);
    // Gradients w.r.t. encoded keys/values, accumulated over all positions,
    // then pushed through the encoders once.
    let mut d_keys: Vec<Vec<f64>> = enc.keys.iter().map(|k| vec![0.0; k.len()]).collect();
    let mut d_values: Vec<Vec<f64>> = enc.values.iter().map(|v| vec![0.0; v.len()]).collect();

    let mut x = vec![0.0; c];
    let mut q = vec![0.0; d];
    let mut u = vec![0.0; c];
    let mut g = vec![0.0; dv];
    let mut dq = vec![0.0; d];
    let mut parts: Vec<Vec<f64>> = vec![vec![0.0; dv]; t];
    let mut affinities = vec![0.0; t * cells];

    for r in 0..h {
        for col in 0..w {
            search.cell_into(r, col, &mut x);
            upstream.cell_into(r, col, &mut u);
            params.query_enc.apply_cell(&x, &mut q);

            // Forward pieces needed again: affinities and the aggregate.
            for (entry, part) in parts.iter_mut().enumerate() {
                part.iter_mut().for_each(|v| *v = 0.0);
                let keys = &enc.keys[entry];
                let values = &enc.values[entry];
                for cell_idx in 0..cells {
                    let key = &keys[cell_idx * d..(cell_idx + 1) * d];
                    let mut a = 0.0;
                    for (qd, kd) in q.iter().zip(key.iter()) {
                        a += qd * kd;
                    }
                    affinities[entry * cells + cell_idx] = a;
                    let value = &values[cell_idx * dv..(cell_idx + 1) * dv];
                    for (p, v) in part.iter_mut().zip(value.iter()) {
                        *p += a * v;
                    }
                }
            }
            let mut agg = pairwise_vec_sum(&parts);
            for v in agg.iter_mut() {
                *v /= n;
            }

            // d_output_w[o][e] += u[o] * agg[e]; g = W^T u, scaled.
            g.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..c {
                let uo = u[o] * path_scale;
                let row = o * dv;
                for e in 0..dv {
                    d_output_w[row + e] += uo * agg[e];
                    g[e] += params.output.weight(o, e) * uo;
                }
            }
            // Residual path.
            for ch in 0..c {
                d_search.add_at(ch, r, col, u[ch] * path_scale);
            }

            // Through the 1/N mean into affinities, values, and the query.
            let inv_n = 1.0 / n;
            dq.iter_mut().for_each(|v| *v = 0.0);
            for entry in 0..t {
                let keys = &enc.keys[entry];
                let values = &enc.values[entry];
                let dvals = &mut d_values[entry];
                let dkeys = &mut d_keys[entry];
                for cell_idx in 0..cells {
                    let a = affinities[entry * cells + cell_idx];
                    let value = &values[cell_idx * dv..(cell_idx + 1) * dv];
                    // da = (g/N) . v
                    let mut da = 0.0;
                    for (ge, ve) in g.iter().zip(value.iter()) {
                        da += ge * ve;
                    }
                    da *= inv_n;
                    // dv += a * g / N
                    for (slot, ge) in dvals[cell_idx * dv..(cell_idx + 1) * dv]
                        .iter_mut()
                        .zip(g.iter())
                    {
                        *slot += a * ge * inv_n;
                    }
                    // dq += da * k; dk += da * q
                    let key = &keys[cell_idx * d..(cell_idx + 1) * d];
                    for ((dqd, kd), (dkd, qd)) in dq
                        .iter_mut()
                        .zip(key.iter())
                        .zip(dkeys[cell_idx * d..(cell_idx + 1) * d].iter_mut().zip(q.iter()))
                    {
                        *dqd += da * kd;
                        *dkd += da * qd;
                    }
                }
            }
            // Query encoder: dQ[dd][ch] += dq[dd] * x[ch]; d_search += Q^T dq.
            for dd in 0..d {
                let row = dd * c;
                let dqd = dq[dd];
                for ch in 0..c {
                    d_query_w[row + ch] += dqd * x[ch];
                    d_search.add_at(ch, r, col, params.query_enc.weight(dd, ch) * dqd);
                }
            }
        }
    }

    // Push encoded-cell gradients through the key and value encoders.
    let mut d_templates = Vec::with_capacity(t);
    let mut tcell = vec![0.0; c];
    for (entry_idx, entry) in templates.entries().iter().enumerate() {
        let mut d_entry = FeatureMap::zeros(c, entry.height(), entry.width());
        let dkeys = &d_keys[entry_idx];
        let dvals = &d_values[entry_idx];
        let mut cell_idx = 0;
        for r in 0..entry.height() {
            for col in 0..entry.width() {
                entry.cell_into(r, col, &mut tcell);
                let dk = &dkeys[cell_idx * d..(cell_idx + 1) * d];
                for dd in 0..d {
                    let row = dd * c;
                    for ch in 0..c {
                        d_key_w[row + ch] += dk[dd] * tcell[ch];
                        d_entry.add_at(ch, r, col, params.key_enc.weight(dd, ch) * dk[dd]);
                    }
                }
                let dval = &dvals[cell_idx * dv..(cell_idx + 1) * dv];
                for dd in 0..dv {
                    let row = dd * c;
                    for ch in 0..c {
                        d_value_w[row + ch] += dval[dd] * tcell[ch];
                        d_entry.add_at(ch, r, col, params.value_enc.weight(dd, ch) * dval[dd]);
                    }
                }
                cell_idx += 1;
            }
        }
        d_templates.push(d_entry);
    }

    Ok(AttentionGrads {
        d_query_w,
        d_key_w,
        d_value_w,
        d_output_w,
        d_search,
        d_templates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{close, finite_diff_grad, map_dot};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    fn random_encoder(rng: &mut ChaCha8Rng, o: usize, i: usize) -> PointwiseLinear {
        let weights = (0..o * i).map(|_| rng.gen_range(-0.8..0.8)).collect();
        PointwiseLinear::new(o, i, weights, None).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, c: usize, d: usize) -> AttentionParams {
        AttentionParams::new(
            random_encoder(rng, d, c),
            random_encoder(rng, d, c),
            random_encoder(rng, d, c),
            random_encoder(rng, c, d),
        )
        .unwrap()
    }

    fn random_templates(
        rng: &mut ChaCha8Rng,
        t: usize,
        c: usize,
        hw: usize,
    ) -> StackedTemplates {
        StackedTemplates::new((0..t).map(|_| random_map(rng, c, hw, hw)).collect()).unwrap()
    }

    /// Scalar reference: five nested loops straight from the definition.
    /// Kept free of the production helpers on purpose.
    fn transform_reference(
        search: &FeatureMap,
        templates: &StackedTemplates,
        params: &AttentionParams,
    ) -> FeatureMap {
        let (c, h, w) = search.shape();
        let d = params.embed_dim();
        let dv = params.value_enc.out_channels();
        let n = templates.total_cells() as f64;
        let mut out = FeatureMap::zeros(c, h, w);
        for r in 0..h {
            for col in 0..w {
                let x = search.cell(r, col);
                let mut agg = vec![0.0; dv];
                for entry in templates.entries() {
                    for tr in 0..entry.height() {
                        for tc in 0..entry.width() {
                            let tcell = entry.cell(tr, tc);
                            // a = (Q x) . (K t)
                            let mut a = 0.0;
                            for dd in 0..d {
                                let mut qv = 0.0;
                                let mut kv = 0.0;
                                for ch in 0..c {
                                    qv += params.query_enc.weight(dd, ch) * x[ch];
                                    kv += params.key_enc.weight(dd, ch) * tcell[ch];
                                }
                                a += qv * kv;
                            }
                            for (e, slot) in agg.iter_mut().enumerate() {
                                let mut vv = 0.0;
                                for ch in 0..c {
                                    vv += params.value_enc.weight(e, ch) * tcell[ch];
                                }
                                *slot += a * vv;
                            }
                        }
                    }
                }
                for ch in 0..c {
                    let mut y = x[ch];
                    for (e, slot) in agg.iter().enumerate() {
                        y += params.output.weight(ch, e) * slot / n;
                    }
                    out.set(ch, r, col, y);
                }
            }
        }
        out
    }

    #[test]
    fn affinity_identity_encoders() {
        let params = AttentionParams::new(
            PointwiseLinear::identity(3),
            PointwiseLinear::identity(3),
            PointwiseLinear::identity(3),
            PointwiseLinear::identity(3),
        )
        .unwrap();
        // Orthogonal unit vectors.
        assert_eq!(
            affinity(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &params).unwrap(),
            0.0
        );
        // Equal unit vectors.
        assert_eq!(
            affinity(&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0], &params).unwrap(),
            1.0
        );
    }

    #[test]
    fn affinity_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = random_params(&mut rng, 6, 4);
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = affinity(&x, &t, &params).unwrap();
        let mut want = 0.0;
        for dd in 0..4 {
            let mut qv = 0.0;
            let mut kv = 0.0;
            for ch in 0..6 {
                qv += params.query_enc.weight(dd, ch) * x[ch];
                kv += params.key_enc.weight(dd, ch) * t[ch];
            }
            want += qv * kv;
        }
        assert!(close(got, want, 1e-12, 1e-15));
    }

    #[test]
    fn zero_affinity_is_exact_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = 4;
        let mut params = random_params(&mut rng, c, 8);
        params.query_enc = PointwiseLinear::zeros(8, c, false);
        let search = random_map(&mut rng, c, 6, 7);
        let templates = random_templates(&mut rng, 3, c, 5);
        let out = transform(&search, &templates, &params).unwrap();
        assert_eq!(out, search);
    }

    #[test]
    fn repeated_queue_entry_equals_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let c = 3;
        let params = random_params(&mut rng, c, 8);
        let search = random_map(&mut rng, c, 4, 4);
        let single = random_templates(&mut rng, 1, c, 3);
        let repeated = single.repeated(4).unwrap();
        let a = transform(&search, &single, &params).unwrap();
        let b = transform(&search, &repeated, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn whole_queue_duplication_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let c = 5;
        let params = random_params(&mut rng, c, 8);
        let search = random_map(&mut rng, c, 5, 6);
        let templates = random_templates(&mut rng, 3, c, 4);
        let base = transform(&search, &templates, &params).unwrap();
        for m in [2usize, 4] {
            let rep = templates.repeated(m).unwrap();
            let out = transform(&search, &rep, &params).unwrap();
            assert_eq!(base, out, "m = {m}");
        }
    }

    #[test]
    fn permuting_entries_is_invariant_to_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let c = 4;
        let params = random_params(&mut rng, c, 8);
        let search = random_map(&mut rng, c, 4, 5);
        let templates = random_templates(&mut rng, 4, c, 3);
        let base = transform(&search, &templates, &params).unwrap();
        let mut entries = templates.entries().to_vec();
        entries.rotate_left(2);
        entries.swap(0, 1);
        let permuted = StackedTemplates::new(entries).unwrap();
        let out = transform(&search, &permuted, &params).unwrap();
        for (a, b) in base.data().iter().zip(out.data().iter()) {
            assert!(close(*a, *b, 1e-12, 1e-12));
        }
    }

    #[test]
    fn transform_matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let c = 8;
        let params = random_params(&mut rng, c, 4);
        let search = random_map(&mut rng, c, 10, 10);
        let templates = random_templates(&mut rng, 2, c, 3);
        let got = transform(&search, &templates, &params).unwrap();
        let want = transform_reference(&search, &templates, &params);
        for (a, b) in got.data().iter().zip(want.data().iter()) {
            assert!(close(*a, *b, 1e-6, 1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn transform_rejects_channel_mismatch_and_empty_queue() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = random_params(&mut rng, 4, 8);
        let search = random_map(&mut rng, 3, 4, 4);
        let templates = random_templates(&mut rng, 1, 4, 3);
        assert!(matches!(
            transform(&search, &templates, &params),
            Err(TregError::Shape { .. })
        ));
        assert!(matches!(
            StackedTemplates::new(vec![]),
            Err(TregError::Precondition(_))
        ));
    }

    #[test]
    fn attention_map_zero_affinity_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let c = 4;
        let mut params = random_params(&mut rng, c, 8);
        params.query_enc = PointwiseLinear::zeros(8, c, false);
        let search = random_map(&mut rng, c, 4, 4);
        let templates = random_templates(&mut rng, 2, c, 5);
        let map = attention_map(&search, &templates, &params).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_map_single_cell_reduces_to_affinity() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let c = 4;
        let params = random_params(&mut rng, c, 8);
        let search = random_map(&mut rng, c, 3, 3);
        let templates = random_templates(&mut rng, 1, c, 1);
        let map = attention_map(&search, &templates, &params).unwrap();
        let tcell = templates.entries()[0].cell(0, 0);
        for r in 0..3 {
            for col in 0..3 {
                let want = affinity(&search.cell(r, col), &tcell, &params).unwrap();
                assert!(close(map.get(0, r, col), want, 1e-12, 1e-15));
            }
        }
    }

    #[test]
    fn attention_map_matches_reference_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let c = 5;
        let params = random_params(&mut rng, c, 8);
        let search = random_map(&mut rng, c, 4, 6);
        let templates = random_templates(&mut rng, 3, c, 3);
        let got = attention_map(&search, &templates, &params).unwrap();
        let n = templates.total_cells() as f64;
        for r in 0..4 {
            for col in 0..6 {
                let x = search.cell(r, col);
                let mut acc = 0.0;
                for entry in templates.entries() {
                    for tr in 0..3 {
                        for tc in 0..3 {
                            acc += affinity(&x, &entry.cell(tr, tc), &params).unwrap();
                        }
                    }
                }
                assert!(close(got.get(0, r, col), acc / n, 1e-9, 1e-12));
            }
        }
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = 4;
        let params = random_params(&mut rng, c, 8);
        let search = random_map(&mut rng, c, 3, 4);
        let templates = random_templates(&mut rng, 2, c, 3);
        let grads =
            transform_backward(&search, &templates, &params, &FeatureMap::zeros(c, 3, 4))
                .unwrap();
        assert!(grads.d_query_w.iter().all(|&v| v == 0.0));
        assert!(grads.d_search.data().iter().all(|&v| v == 0.0));
        assert!(grads.d_templates[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_zero_query_encoder_passes_upstream_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let c = 4;
        let mut params = random_params(&mut rng, c, 8);
        params.query_enc = PointwiseLinear::zeros(8, c, false);
        let search = random_map(&mut rng, c, 3, 3);
        let templates = random_templates(&mut rng, 2, c, 3);
        let upstream = random_map(&mut rng, c, 3, 3);
        let grads = transform_backward(&search, &templates, &params, &upstream).unwrap();
        assert_eq!(grads.d_search, upstream);
    }

    #[test]
    fn backward_matches_finite_differences_on_all_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let c = 4;
        let d = 3;
        let params = random_params(&mut rng, c, d);
        let search = random_map(&mut rng, c, 3, 3);
        let templates = random_templates(&mut rng, 2, c, 2);
        let upstream = random_map(&mut rng, c, 3, 3);
        let grads = transform_backward(&search, &templates, &params, &upstream).unwrap();

        let rebuild = |which: usize, vals: &[f64]| {
            let mut p = params.clone();
            let layer = match which {
                0 => &mut p.query_enc,
                1 => &mut p.key_enc,
                2 => &mut p.value_enc,
                _ => &mut p.output,
            };
            layer.weights_mut().copy_from_slice(vals);
            p
        };
        let analytic = [
            (&grads.d_query_w, params.query_enc.weights()),
            (&grads.d_key_w, params.key_enc.weights()),
            (&grads.d_value_w, params.value_enc.weights()),
            (&grads.d_output_w, params.output.weights()),
        ];
        for (which, (got, base)) in analytic.iter().enumerate() {
            let fd = finite_diff_grad(
                |vals| {
                    let p = rebuild(which, vals);
                    map_dot(&transform(&search, &templates, &p).unwrap(), &upstream)
                },
                base,
                1e-5,
            )
            .unwrap();
            for (a, f) in got.iter().zip(fd.iter()) {
                assert!(close(*a, *f, 1e-4, 1e-8), "param set {which}: {a} vs {f}");
            }
        }

        // Search and template gradients.
        let fd = finite_diff_grad(
            |vals| {
                let m = FeatureMap::new(c, 3, 3, vals.to_vec()).unwrap();
                map_dot(&transform(&m, &templates, &params).unwrap(), &upstream)
            },
            search.data(),
            1e-5,
        )
        .unwrap();
        for (a, f) in grads.d_search.data().iter().zip(fd.iter()) {
            assert!(close(*a, *f, 1e-4, 1e-8), "search grad {a} vs {f}");
        }
        for entry_idx in 0..templates.count() {
            let fd = finite_diff_grad(
                |vals| {
                    let mut entries = templates.entries().to_vec();
                    entries[entry_idx] = FeatureMap::new(c, 2, 2, vals.to_vec()).unwrap();
                    let tt = StackedTemplates::new(entries).unwrap();
                    map_dot(&transform(&search, &tt, &params).unwrap(), &upstream)
                },
                templates.entries()[entry_idx].data(),
                1e-5,
            )
            .unwrap();
            for (a, f) in grads.d_templates[entry_idx].data().iter().zip(fd.iter()) {
                assert!(close(*a, *f, 1e-4, 1e-8), "template {entry_idx}: {a} vs {f}");
            }
        }
    }

    #[test]
    fn value_path_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let c = 4;
        let params = random_params(&mut rng, c, 8);
        let search = random_map(&mut rng, c, 4, 4);
        let templates = random_templates(&mut rng, 2, c, 3);
        let base = transform(&search, &templates, &params).unwrap();
        let mut scaled = params.clone();
        for v in scaled.value_enc.weights_mut() {
            *v *= 3.0;
        }
        let out = transform(&search, &templates, &scaled).unwrap();
        for i in 0..base.data().len() {
            let delta_base = base.data()[i] - search.data()[i];
            let delta_scaled = out.data()[i] - search.data()[i];
            assert!(close(delta_scaled, 3.0 * delta_base, 1e-9, 1e-12));
        }
    }

    #[test]
    fn average_residual_halves_both_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let c = 3;
        let mut params = random_params(&mut rng, c, 8);
        let search = random_map(&mut rng, c, 3, 3);
        let templates = random_templates(&mut rng, 2, c, 2);
        let summed = transform(&search, &templates, &params).unwrap();
        params.average_residual = true;
        let averaged = transform(&search, &templates, &params).unwrap();
        for i in 0..summed.data().len() {
            assert!(close(averaged.data()[i], summed.data()[i] / 2.0, 1e-12, 1e-15));
        }
    }
}

//! Lightweight online classification: Gaussian training labels, a ridge-
//! regression correlation filter fit by safeguarded gradient descent, and
//! argmax center localization with a logistic confidence.

use crate::error::{Result, TregError};
use crate::tensor::FeatureMap;

/// Single-channel confidence grid. Argmax ties break toward the smallest
/// row, then the smallest column.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap(FeatureMap);

impl ScoreMap {
    pub fn new(map: FeatureMap) -> Result<Self> {
        if map.channels() != 1 {
            return Err(TregError::shape("1 channel", map.shape_str()));
        }
        map.check_finite("score map")?;
        Ok(ScoreMap(map))
    }

    pub fn map(&self) -> &FeatureMap {
        &self.0
    }

    pub fn into_map(self) -> FeatureMap {
        self.0
    }

    pub fn argmax(&self) -> ((usize, usize), f64) {
        let mut best = (0usize, 0usize);
        let mut best_v = f64::NEG_INFINITY;
        for r in 0..self.0.height() {
            for c in 0..self.0.width() {
                let v = self.0.get(0, r, c);
                if v > best_v {
                    best_v = v;
                    best = (r, c);
                }
            }
        }
        (best, best_v)
    }

    pub fn mean(&self) -> f64 {
        self.0.data().iter().sum::<f64>() / self.0.data().len() as f64
    }
}

/// Gaussian label map: `exp(-d^2 / (2 sigma^2))` at squared grid distance
/// `d^2` from the center; the peak value at the center is exactly 1.
pub fn gaussian_label(center: (usize, usize), sigma: f64, size: (usize, usize)) -> Result<ScoreMap> {
    let (h, w) = size;
    if center.0 >= h || center.1 >= w {
        return Err(TregError::Precondition(format!(
            "center {center:?} outside {h}x{w} grid"
        )));
    }
    if !(sigma > 0.0) {
        return Err(TregError::Precondition(format!("sigma must be > 0, got {sigma}")));
    }
    let denom = 2.0 * sigma * sigma;
    let map = FeatureMap::from_fn(1, h, w, |_, r, c| {
        let dr = r as f64 - center.0 as f64;
        let dc = c as f64 - center.1 as f64;
        (-(dr * dr + dc * dc) / denom).exp()
    });
    Ok(ScoreMap(map))
}

/// Correlation filter with ridge regularization, fit online.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineFilter {
    pub weights: FeatureMap,
    pub lambda: f64,
    pub learning_rate: f64,
}

/// Options for [`fit_filter`].
#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub filter_size: usize,
    pub iterations: usize,
    pub step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { filter_size: 5, iterations: 60, step: 1.0 }
    }
}

/// Valid cross-correlation of `filter` with `feature`, summed over
/// channels and zero-padded back to the feature's spatial size. The valid
/// region is centered, offset by `(k - 1) / 2`.
pub fn score(filter: &FeatureMap, feature: &FeatureMap) -> Result<ScoreMap> {
    if filter.channels() != feature.channels() {
        return Err(TregError::shape(
            format!("{} channels", feature.channels()),
            format!("filter {}", filter.shape_str()),
        ));
    }
    let (c, kh, kw) = filter.shape();
    let (h, w) = (feature.height(), feature.width());
    if kh > h || kw > w {
        return Err(TregError::shape(
            format!("filter no larger than {h}x{w}"),
            format!("{kh}x{kw}"),
        ));
    }
    let off_r = (kh - 1) / 2;
    let off_c = (kw - 1) / 2;
    let mut out = FeatureMap::zeros(1, h, w);
    for vr in 0..=(h - kh) {
        for vc in 0..=(w - kw) {
            let mut acc = 0.0;
            for ch in 0..c {
                for fr in 0..kh {
                    for fc in 0..kw {
                        acc += filter.get(ch, fr, fc) * feature.get(ch, vr + fr, vc + fc);
                    }
                }
            }
            out.set(0, vr + off_r, vc + off_c, acc);
        }
    }
    ScoreMap::new(out)
}

/// Gradients of a scalar loss through [`score`] with respect to the filter
/// and the feature. `upstream` is shaped like the score map; only its
/// valid region carries gradient.
pub fn score_backward(
    filter: &FeatureMap,
    feature: &FeatureMap,
    upstream: &FeatureMap,
) -> Result<(FeatureMap, FeatureMap)> {
    let (c, kh, kw) = filter.shape();
    let (h, w) = (feature.height(), feature.width());
    if upstream.shape() != (1, h, w) {
        return Err(TregError::shape(
            format!("1x{h}x{w}"),
            upstream.shape_str(),
        ));
    }
    let off_r = (kh - 1) / 2;
    let off_c = (kw - 1) / 2;
    let mut d_filter = FeatureMap::zeros(c, kh, kw);
    let mut d_feature = FeatureMap::zeros(c, h, w);
    for vr in 0..=(h - kh) {
        for vc in 0..=(w - kw) {
            let u = upstream.get(0, vr + off_r, vc + off_c);
            if u == 0.0 {
                continue;
            }
            for ch in 0..c {
                for fr in 0..kh {
                    for fc in 0..kw {
                        d_filter.add_at(ch, fr, fc, u * feature.get(ch, vr + fr, vc + fc));
                        d_feature.add_at(ch, vr + fr, vc + fc, u * filter.get(ch, fr, fc));
                    }
                }
            }
        }
    }
    Ok((d_filter, d_feature))
}

fn objective(filter: &FeatureMap, samples: &[(FeatureMap, ScoreMap)], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for (feature, label) in samples {
        let s = score(filter, feature)?;
        for (a, b) in s.map().data().iter().zip(label.map().data()) {
            let d = a - b;
            total += d * d;
        }
    }
    total += lambda * filter.data().iter().map(|v| v * v).sum::<f64>();
    Ok(total)
}

/// Fits a correlation filter to `samples` by minimizing the squared score
/// error plus a ridge penalty, using gradient descent from a zero filter
/// with a halving step safeguard so the objective never increases.
pub fn fit_filter(
    samples: &[(FeatureMap, ScoreMap)],
    lambda: f64,
    opts: &FitOptions,
) -> Result<OnlineFilter> {
    let first = samples
        .first()
        .ok_or_else(|| TregError::Precondition("fit_filter needs at least one sample".into()))?;
    let c = first.0.channels();
    for (feature, label) in samples {
        if feature.channels() != c {
            return Err(TregError::shape(
                format!("{c} channels"),
                feature.shape_str(),
            ));
        }
        if label.map().height() != feature.height() || label.map().width() != feature.width() {
            return Err(TregError::shape(feature.shape_str(), label.map().shape_str()));
        }
    }
    let k = opts.filter_size;
    let mut filter = FeatureMap::zeros(c, k, k);
    let mut current = objective(&filter, samples, lambda)?;
    let mut step = opts.step;
    for _ in 0..opts.iterations {
        // grad = 2 sum_i corr_adjoint(residual_i) + 2 lambda filter
        let mut grad = filter.scaled(2.0 * lambda);
        for (feature, label) in samples {
            let s = score(&filter, feature)?;
            let mut residual = s.into_map();
            for (r, l) in residual.data_mut().iter_mut().zip(label.map().data()) {
                *r = 2.0 * (*r - l);
            }
            let (d_filter, _) = score_backward(&filter, feature, &residual)?;
            grad.add_scaled(&d_filter, 1.0);
        }
        // Normalize the step by the gradient scale so the default step is
        // usable across feature magnitudes.
        let gnorm = grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = filter.clone();
            trial.add_scaled(&grad, -step / gnorm.max(1e-12));
            let value = objective(&trial, samples, lambda)?;
            if value < current {
                filter = trial;
                current = value;
                step *= 1.5;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    filter.check_finite("fitted filter")?;
    Ok(OnlineFilter { weights: filter, lambda, learning_rate: opts.step })
}

/// Logistic squashing to (0, 1).
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Argmax localization with a confidence in [0, 1]:
/// `logistic(peak - mean of map)`. Both the argmax and the confidence are
/// invariant to adding a constant to the whole map.
pub fn locate(score_map: &ScoreMap) -> ((usize, usize), f64) {
    let (pos, peak) = score_map.argmax();
    (pos, logistic(peak - score_map.mean()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::close;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_label_peak_and_decay() {
        let label = gaussian_label((4, 5), 2.0, (9, 11)).unwrap();
        assert_eq!(label.map().get(0, 4, 5), 1.0);
        // sigma = 2, distance 2: exp(-0.5)
        assert!(close(label.map().get(0, 4, 7), (-0.5f64).exp(), 1e-12, 1e-15));
        // Monotone decay with distance along a row.
        let mut prev = f64::INFINITY;
        for c in 5..11 {
            let v = label.map().get(0, 4, c);
            assert!(v < prev || c == 5);
            prev = v;
        }
    }

    #[test]
    fn score_zero_filter_is_zero() {
        let filter = FeatureMap::zeros(2, 3, 3);
        let feature = FeatureMap::from_fn(2, 6, 6, |c, r, w| (c + r + w) as f64);
        let s = score(&filter, &feature).unwrap();
        assert!(s.map().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn score_one_by_one_filter_weights_channels() {
        let mut filter = FeatureMap::zeros(2, 1, 1);
        filter.set(0, 0, 0, 2.0);
        filter.set(1, 0, 0, -1.0);
        let feature = FeatureMap::from_fn(2, 3, 3, |c, r, w| (c * 10 + r * 3 + w) as f64);
        let s = score(&filter, &feature).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let want = 2.0 * feature.get(0, r, c) - feature.get(1, r, c);
                assert_eq!(s.map().get(0, r, c), want);
            }
        }
    }

    // Sliding-window scalar oracle.
    #[test]
    fn score_matches_sliding_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let filter = FeatureMap::from_fn(3, 3, 3, |_, _, _| rng.gen_range(-1.0..1.0));
        let feature = FeatureMap::from_fn(3, 7, 8, |_, _, _| rng.gen_range(-1.0..1.0));
        let s = score(&filter, &feature).unwrap();
        assert_eq!(s.map().shape(), (1, 7, 8));
        for vr in 0..5 {
            for vc in 0..6 {
                let mut want = 0.0;
                for ch in 0..3 {
                    for fr in 0..3 {
                        for fc in 0..3 {
                            want += filter.get(ch, fr, fc) * feature.get(ch, vr + fr, vc + fc);
                        }
                    }
                }
                assert!(close(s.map().get(0, vr + 1, vc + 1), want, 1e-12, 1e-15));
            }
        }
        // Padding ring is zero.
        for c in 0..8 {
            assert_eq!(s.map().get(0, 6, c), 0.0);
        }
    }

    #[test]
    fn fit_filter_large_lambda_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let feature = FeatureMap::from_fn(2, 6, 6, |_, _, _| rng.gen_range(-1.0..1.0));
        let label = gaussian_label((3, 3), 2.0, (6, 6)).unwrap();
        let small = fit_filter(
            &[(feature.clone(), label.clone())],
            1e-3,
            &FitOptions { filter_size: 3, ..Default::default() },
        )
        .unwrap();
        let huge = fit_filter(
            &[(feature, label)],
            1e9,
            &FitOptions { filter_size: 3, ..Default::default() },
        )
        .unwrap();
        let norm = |f: &FeatureMap| f.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm(&huge.weights) < 1e-6, "lambda -> inf drives filter to 0");
        assert!(norm(&small.weights) > 1e-3);
    }

    // Planted-solution oracle: labels generated by a known filter are
    // reproduced with small residual when lambda is small.
    #[test]
    fn fit_filter_recovers_planted_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let planted = FeatureMap::from_fn(2, 3, 3, |_, _, _| rng.gen_range(-0.5..0.5));
        let feature = FeatureMap::from_fn(2, 8, 8, |_, _, _| rng.gen_range(-1.0..1.0));
        let label = score(&planted, &feature).unwrap();
        let fitted = fit_filter(
            &[(feature.clone(), label.clone())],
            1e-9,
            &FitOptions { filter_size: 3, iterations: 400, step: 1.0 },
        )
        .unwrap();
        let reproduced = score(&fitted.weights, &feature).unwrap();
        let mut resid = 0.0f64;
        for (a, b) in reproduced.map().data().iter().zip(label.map().data()) {
            resid = resid.max((a - b).abs());
        }
        assert!(resid < 1e-3, "max residual {resid}");
    }

    #[test]
    fn fit_filter_objective_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let feature = FeatureMap::from_fn(2, 7, 7, |_, _, _| rng.gen_range(-1.0..1.0));
        let label = gaussian_label((3, 3), 1.5, (7, 7)).unwrap();
        let samples = vec![(feature, label)];
        // Re-run the descent loop manually, tracking the objective.
        let mut values = Vec::new();
        for iters in [0usize, 5, 15, 40] {
            let f = fit_filter(
                &samples,
                1e-4,
                &FitOptions { filter_size: 3, iterations: iters, step: 1.0 },
            )
            .unwrap();
            values.push(objective(&f.weights, &samples, 1e-4).unwrap());
        }
        for pair in values.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "objective not increasing: {values:?}");
        }
    }

    #[test]
    fn fit_filter_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let feature = FeatureMap::from_fn(2, 6, 6, |_, _, _| rng.gen_range(-1.0..1.0));
        let label = gaussian_label((2, 4), 2.0, (6, 6)).unwrap();
        let samples = vec![(feature, label)];
        let a = fit_filter(&samples, 1e-3, &FitOptions::default()).unwrap();
        let b = fit_filter(&samples, 1e-3, &FitOptions::default()).unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn locate_delta_and_constant_maps() {
        let mut m = FeatureMap::zeros(1, 5, 5);
        m.set(0, 2, 3, 1.0);
        let (pos, conf) = locate(&ScoreMap::new(m).unwrap());
        assert_eq!(pos, (2, 3));
        assert!(conf > 0.5);

        let flat = ScoreMap::new(FeatureMap::from_fn(1, 4, 4, |_, _, _| 0.7)).unwrap();
        let (pos, conf) = locate(&flat);
        assert_eq!(pos, (0, 0));
        assert_eq!(conf, 0.5);
    }

    #[test]
    fn locate_gaussian_center() {
        let label = gaussian_label((6, 2), 2.0, (9, 9)).unwrap();
        let (pos, _) = locate(&label);
        assert_eq!(pos, (6, 2));
    }

    #[test]
    fn locate_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let base = FeatureMap::from_fn(1, 6, 6, |_, _, _| rng.gen_range(-1.0..1.0));
        let shifted = FeatureMap::from_fn(1, 6, 6, |c, r, w| base.get(c, r, w) + 13.5);
        let (p1, c1) = locate(&ScoreMap::new(base).unwrap());
        let (p2, c2) = locate(&ScoreMap::new(shifted).unwrap());
        assert_eq!(p1, p2);
        assert!(close(c1, c2, 1e-9, 1e-12));
    }
}

//! Reduced discriminative tracker: sparse random projections of the patch,
//! a Gaussian naive Bayes classifier and convex-blend model updates
//! controlled by a learning parameter `lambda`.
//!
//! `lambda = 1` leaves the model untouched; smaller values move the class
//! statistics towards the newest samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Lower bound on every class-conditional variance.
pub const VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("box {0:?} does not fit in a {1}x{2} frame")]
    OutOfBounds(BoundingBox, usize, usize),
    #[error("frame has {got} pixels, expected {expected}")]
    FrameSize { expected: usize, got: usize },
    #[error("feature vector has {got} entries, model has {expected}")]
    FeatureCount { expected: usize, got: usize },
    #[error("lambda = {0} must lie in [0, 1]")]
    Lambda(f64),
    #[error("need at least one feature and a nonempty patch")]
    EmptyExtractor,
}

pub type Result<T, E = TrackerError> = std::result::Result<T, E>;

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(TrackerError::FrameSize {
                expected: height * width,
                got: pixels.len(),
            });
        }
        Ok(Frame {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Frame {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn contains(&self, b: &BoundingBox) -> bool {
        b.x >= 0
            && b.y >= 0
            && b.w > 0
            && b.h > 0
            && (b.x as usize + b.w) <= self.width
            && (b.y as usize + b.h) <= self.height
    }

    /// Pixels inside `b`, row by row.
    pub fn crop(&self, b: &BoundingBox) -> Result<Vec<f64>> {
        if !self.contains(b) {
            return Err(TrackerError::OutOfBounds(*b, self.height, self.width));
        }
        let (x, y) = (b.x as usize, b.y as usize);
        let mut out = Vec::with_capacity(b.w * b.h);
        for row in y..y + b.h {
            out.extend_from_slice(&self.pixels[row * self.width + x..row * self.width + x + b.w]);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x: i64,
    pub y: i64,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn new(x: i64, y: i64, w: usize, h: usize) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn shifted(&self, dx: i64, dy: i64) -> Self {
        BoundingBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    pub fn area(&self) -> f64 {
        (self.w * self.h) as f64
    }

    /// Intersection over union.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w as i64).min(other.x + other.w as i64);
        let y1 = (self.y + self.h as i64).min(other.y + other.h as i64);
        let inter = ((x1 - x0).max(0) * (y1 - y0).max(0)) as f64;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Sparse random projections of a box resampled to `patch_h x patch_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatureExtractor {
    patch_h: usize,
    patch_w: usize,
    seed: u64,
    entries: Vec<Vec<(usize, f64)>>,
}

impl SparseFeatureExtractor {
    /// Each feature sums 2 to 4 distinct pixels with random signs.
    pub fn new(num_features: usize, patch_h: usize, patch_w: usize, seed: u64) -> Result<Self> {
        let pixels = patch_h * patch_w;
        if num_features == 0 || pixels == 0 {
            return Err(TrackerError::EmptyExtractor);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..num_features)
            .map(|_| {
                let k = rng.random_range(2..=4usize).min(pixels);
                let mut picked: Vec<usize> = Vec::with_capacity(k);
                while picked.len() < k {
                    let idx = rng.random_range(0..pixels);
                    if !picked.contains(&idx) {
                        picked.push(idx);
                    }
                }
                picked
                    .into_iter()
                    .map(|idx| (idx, if rng.random::<bool>() { 1.0 } else { -1.0 }))
                    .collect()
            })
            .collect();
        Ok(SparseFeatureExtractor {
            patch_h,
            patch_w,
            seed,
            entries,
        })
    }

    pub fn num_features(&self) -> usize {
        self.entries.len()
    }

    pub fn patch_dims(&self) -> (usize, usize) {
        (self.patch_h, self.patch_w)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &[Vec<(usize, f64)>] {
        &self.entries
    }

    /// Feature vector of the box, after nearest-neighbour resampling.
    pub fn extract(&self, frame: &Frame, b: &BoundingBox) -> Result<Vec<f64>> {
        if !frame.contains(b) {
            return Err(TrackerError::OutOfBounds(*b, frame.height, frame.width));
        }
        let (x, y) = (b.x as usize, b.y as usize);
        let pixel = |idx: usize| {
            let (pr, pc) = (idx / self.patch_w, idx % self.patch_w);
            frame.get(y + pr * b.h / self.patch_h, x + pc * b.w / self.patch_w)
        };
        Ok(self
            .entries
            .iter()
            .map(|feature| feature.iter().map(|&(idx, w)| w * pixel(idx)).sum())
            .collect())
    }
}

/// Gaussian class-conditional statistics for target (`pos`) and background
/// (`neg`) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerModel {
    pub pos_mean: Vec<f64>,
    pub pos_var: Vec<f64>,
    pub neg_mean: Vec<f64>,
    pub neg_var: Vec<f64>,
    /// Learning parameter of the last update.
    pub lambda: f64,
}

fn mean_of(samples: &[Vec<f64>], len: usize) -> Option<Vec<f64>> {
    if samples.is_empty() {
        return None;
    }
    let mut acc = vec![0.0; len];
    for s in samples {
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= samples.len() as f64);
    Some(acc)
}

fn log_gauss(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

// The blended variance is measured around the blended mean.
fn blend(mean: &mut [f64], var: &mut [f64], sample: &[f64], lambda: f64) {
    for ((m, v), &f) in mean.iter_mut().zip(var.iter_mut()).zip(sample) {
        *m = lambda * *m + (1.0 - lambda) * f;
        *v = (lambda * *v + (1.0 - lambda) * (f - *m) * (f - *m)).max(VAR_FLOOR);
    }
}

// Like `blend` with the set mean as the sample, but the squared deviation is
// averaged over the set, so the background spread enters the variance.
fn blend_set(mean: &mut [f64], var: &mut [f64], set_mean: &[f64], set: &[Vec<f64>], lambda: f64) {
    for (i, ((m, v), &f)) in mean.iter_mut().zip(var.iter_mut()).zip(set_mean).enumerate() {
        *m = lambda * *m + (1.0 - lambda) * f;
        let spread = set.iter().map(|s| (s[i] - *m) * (s[i] - *m)).sum::<f64>() / set.len() as f64;
        *v = (lambda * *v + (1.0 - lambda) * spread).max(VAR_FLOOR);
    }
}

impl TrackerModel {
    /// Model trained on one positive sample and a set of negatives; every
    /// variance starts at `init_var`.
    pub fn from_samples(pos: &[f64], negs: &[Vec<f64>], init_var: f64) -> Self {
        let n = pos.len();
        let neg_mean = mean_of(negs, n).unwrap_or_else(|| vec![0.0; n]);
        let var = init_var.max(VAR_FLOOR);
        TrackerModel {
            pos_mean: pos.to_vec(),
            pos_var: vec![var; n],
            neg_mean,
            neg_var: vec![var; n],
            lambda: 1.0,
        }
    }

    pub fn num_features(&self) -> usize {
        self.pos_mean.len()
    }

    /// Naive Bayes log-likelihood ratio of target versus background.
    pub fn classify(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.num_features() {
            return Err(TrackerError::FeatureCount {
                expected: self.num_features(),
                got: features.len(),
            });
        }
        Ok(features
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                log_gauss(f, self.pos_mean[i], self.pos_var[i])
                    - log_gauss(f, self.neg_mean[i], self.neg_var[i])
            })
            .sum())
    }

    /// Blends the model towards the new samples with weight `1 - lambda`.
    /// The negative variance blends towards the spread of the individual
    /// negatives around the new background mean. With `lambda = 1` the result
    /// is an exact copy; an empty negative set leaves the background
    /// statistics unchanged.
    pub fn update_model(&self, pos: &[f64], negs: &[Vec<f64>], lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(TrackerError::Lambda(lambda));
        }
        if pos.len() != self.num_features() {
            return Err(TrackerError::FeatureCount {
                expected: self.num_features(),
                got: pos.len(),
            });
        }
        if lambda == 1.0 {
            return Ok(self.clone());
        }
        let mut next = self.clone();
        next.lambda = lambda;
        blend(&mut next.pos_mean, &mut next.pos_var, pos, lambda);
        if let Some(neg) = mean_of(negs, self.num_features()) {
            blend_set(&mut next.neg_mean, &mut next.neg_var, &neg, negs, lambda);
        }
        Ok(next)
    }
}

/// Best-scoring box of the same size within Chebyshev distance `radius` of
/// `prev`. Candidates outside the frame are skipped. Ties go to the offset
/// with the smallest `(|dy|, |dx|, dy, dx)`, so a flat score surface keeps
/// `prev`.
pub fn search(
    model: &TrackerModel,
    fx: &SparseFeatureExtractor,
    frame: &Frame,
    prev: &BoundingBox,
    radius: usize,
) -> Result<BoundingBox> {
    let r = radius as i64;
    let mut offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .collect();
    offsets.sort_by_key(|&(dy, dx)| (dy.abs(), dx.abs(), dy, dx));
    let mut best: Option<(f64, BoundingBox)> = None;
    for (dy, dx) in offsets {
        let candidate = prev.shifted(dx, dy);
        if !frame.contains(&candidate) {
            continue;
        }
        let score = model.classify(&fx.extract(frame, &candidate)?)?;
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, candidate));
        }
    }
    Ok(best.map_or(*prev, |(_, b)| b))
}

/// Ring of 8 background boxes around `b`, offset by half its size and
/// clamped into the frame.
pub fn negative_boxes(b: &BoundingBox, frame: &Frame) -> Vec<BoundingBox> {
    let sx = b.w.div_ceil(2) as i64;
    let sy = b.h.div_ceil(2) as i64;
    let max_x = frame.width.saturating_sub(b.w) as i64;
    let max_y = frame.height.saturating_sub(b.h) as i64;
    let mut out = Vec::with_capacity(8);
    for (i, j) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
        let x = (b.x + i * sx).clamp(0, max_x);
        let y = (b.y + j * sy).clamp(0, max_y);
        let candidate = BoundingBox::new(x, y, b.w, b.h);
        if candidate != *b && frame.contains(&candidate) {
            out.push(candidate);
        }
    }
    out
}

/// One camera's tracker: extractor, model and current box.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub fx: SparseFeatureExtractor,
    pub model: TrackerModel,
    pub current: BoundingBox,
    pub radius: usize,
}

impl Tracker {
    /// Starts from a user-provided box on the first frame.
    pub fn start(
        fx: SparseFeatureExtractor,
        frame: &Frame,
        init: BoundingBox,
        radius: usize,
        init_var: f64,
    ) -> Result<Self> {
        let pos = fx.extract(frame, &init)?;
        let negs = negative_boxes(&init, frame)
            .iter()
            .map(|b| fx.extract(frame, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tracker {
            model: TrackerModel::from_samples(&pos, &negs, init_var),
            fx,
            current: init,
            radius,
        })
    }

    /// Moves the box to the best match in `frame`.
    pub fn locate(&mut self, frame: &Frame) -> Result<BoundingBox> {
        self.current = search(&self.model, &self.fx, frame, &self.current, self.radius)?;
        Ok(self.current)
    }

    /// Updates the model from the current box with learning parameter
    /// `lambda`.
    pub fn learn(&mut self, frame: &Frame, lambda: f64) -> Result<()> {
        if lambda == 1.0 {
            return Ok(());
        }
        let pos = self.fx.extract(frame, &self.current)?;
        let negs = negative_boxes(&self.current, frame)
            .iter()
            .map(|b| self.fx.extract(frame, b))
            .collect::<Result<Vec<_>>>()?;
        self.model = self.model.update_model(&pos, &negs, lambda)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn fixture_frame() -> Frame {
        let pixels = (0..64).map(|i| ((i * 37) % 17) as f64 / 4.0).collect();
        Frame::new(8, 8, pixels).unwrap()
    }

    #[test]
    fn zero_frame_gives_zero_features() {
        let fx = SparseFeatureExtractor::new(20, 4, 4, 3).unwrap();
        let f = fx.extract(&Frame::filled(8, 8, 0.0), &BoundingBox::new(2, 2, 4, 4)).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn features_are_linear_in_intensity() {
        let fx = SparseFeatureExtractor::new(20, 4, 4, 3).unwrap();
        let frame = fixture_frame();
        let doubled = Frame::new(8, 8, frame.pixels().iter().map(|p| 2.0 * p).collect()).unwrap();
        let b = BoundingBox::new(1, 2, 6, 5);
        let a = fx.extract(&frame, &b).unwrap();
        let c = fx.extract(&doubled, &b).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn extractor_is_deterministic_and_sparse() {
        let a = SparseFeatureExtractor::new(30, 5, 5, 9).unwrap();
        let b = SparseFeatureExtractor::new(30, 5, 5, 9).unwrap();
        assert_eq!(a, b);
        for f in a.entries() {
            assert!((2..=4).contains(&f.len()));
        }
        assert!(SparseFeatureExtractor::new(0, 5, 5, 9).is_err());
    }

    #[test]
    fn extract_matches_direct_summation() {
        // straightforward summation over the resampled patch
        let fx = SparseFeatureExtractor::new(12, 4, 4, 42).unwrap();
        let frame = fixture_frame();
        let b = BoundingBox::new(0, 0, 8, 8);
        let got = fx.extract(&frame, &b).unwrap();
        let mut patch = [[0.0; 4]; 4];
        for (r, row) in patch.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = frame.get(2 * r, 2 * c);
            }
        }
        for (feature, g) in fx.entries().iter().zip(&got) {
            let expected: f64 = feature.iter().map(|&(i, w)| w * patch[i / 4][i % 4]).sum();
            assert_abs_diff_eq!(expected, g, epsilon = 1e-12);
        }
    }

    #[test]
    fn extract_rejects_boxes_outside() {
        let fx = SparseFeatureExtractor::new(4, 2, 2, 1).unwrap();
        let frame = fixture_frame();
        assert!(fx.extract(&frame, &BoundingBox::new(7, 0, 2, 2)).is_err());
        assert!(fx.extract(&frame, &BoundingBox::new(-1, 0, 2, 2)).is_err());
    }

    #[test]
    fn classify_examples() {
        let same = TrackerModel {
            pos_mean: vec![1.0, 2.0],
            pos_var: vec![0.5, 0.5],
            neg_mean: vec![1.0, 2.0],
            neg_var: vec![0.5, 0.5],
            lambda: 0.85,
        };
        assert_eq!(same.classify(&[3.0, -7.0]).unwrap(), 0.0);
        let shifted = TrackerModel {
            neg_mean: vec![2.0, 3.0],
            ..same.clone()
        };
        assert!(shifted.classify(&[1.0, 2.0]).unwrap() > 0.0);
        // closed form: 4/2 for the first feature, ln(2) - 0.25/2 + 0.25/8 for the second
        let m = TrackerModel {
            pos_mean: vec![0.0, 1.0],
            pos_var: vec![1.0, 1.0],
            neg_mean: vec![2.0, 1.0],
            neg_var: vec![1.0, 4.0],
            lambda: 1.0,
        };
        let expected = 2.0 + std::f64::consts::LN_2 - 0.09375;
        assert_abs_diff_eq!(m.classify(&[0.0, 1.5]).unwrap(), expected, epsilon = 1e-12);
        assert!(m.classify(&[0.0]).is_err());
    }

    #[test]
    fn update_examples() {
        let m = TrackerModel {
            pos_mean: vec![10.0],
            pos_var: vec![1.0],
            neg_mean: vec![0.0],
            neg_var: vec![1.0],
            lambda: 0.85,
        };
        assert_eq!(m.update_model(&[20.0], &[vec![5.0]], 1.0).unwrap(), m);
        assert_eq!(m.update_model(&[20.0], &[], 0.0).unwrap().pos_mean, vec![20.0]);
        let u = m.update_model(&[20.0], &[vec![5.0], vec![7.0]], 0.85).unwrap();
        assert_abs_diff_eq!(u.pos_mean[0], 11.5, epsilon = 1e-12);
        assert_abs_diff_eq!(u.pos_var[0], 0.85 + 0.15 * 8.5 * 8.5, epsilon = 1e-12);
        assert_abs_diff_eq!(u.neg_mean[0], 0.9, epsilon = 1e-12);
        let spread = (4.1 * 4.1 + 6.1 * 6.1) / 2.0;
        assert_abs_diff_eq!(u.neg_var[0], 0.85 + 0.15 * spread, epsilon = 1e-12);
        let no_negs = m.update_model(&[20.0], &[], 0.5).unwrap();
        assert_eq!(no_negs.neg_mean, m.neg_mean);
        assert_eq!(no_negs.neg_var, m.neg_var);
        assert!(m.update_model(&[20.0], &[], 1.5).is_err());
    }

    #[test]
    fn variance_is_floored() {
        let m = TrackerModel {
            pos_mean: vec![1.0],
            pos_var: vec![VAR_FLOOR],
            neg_mean: vec![0.0],
            neg_var: vec![VAR_FLOOR],
            lambda: 0.5,
        };
        let u = m.update_model(&[1.0], &[vec![0.0]], 0.0).unwrap();
        assert_eq!(u.pos_var[0], VAR_FLOOR);
        assert_eq!(u.neg_var[0], VAR_FLOOR);
    }

    fn planted_frame(x: usize, y: usize) -> Frame {
        let mut f = Frame::filled(24, 24, 0.1);
        for r in 0..4 {
            for c in 0..4 {
                f.set(y + r, x + c, 1.0 + (r * 4 + c) as f64 * 0.1);
            }
        }
        f
    }

    #[test]
    fn search_examples() {
        let fx = SparseFeatureExtractor::new(30, 4, 4, 7).unwrap();
        let start = BoundingBox::new(8, 8, 4, 4);
        let first = planted_frame(8, 8);
        let tracker = Tracker::start(fx.clone(), &first, start, 4, 0.5).unwrap();
        assert_eq!(search(&tracker.model, &fx, &first, &start, 0).unwrap(), start);
        let flat = Frame::filled(24, 24, 0.3);
        assert_eq!(search(&tracker.model, &fx, &flat, &start, 3).unwrap(), start);
        let moved = planted_frame(11, 10);
        assert_eq!(
            search(&tracker.model, &fx, &moved, &start, 4).unwrap(),
            start.shifted(3, 2)
        );
    }

    #[test]
    fn negative_ring_stays_inside() {
        let frame = Frame::filled(20, 20, 0.0);
        let ring = negative_boxes(&BoundingBox::new(0, 0, 6, 6), &frame);
        assert!(!ring.is_empty());
        assert!(ring.iter().all(|b| frame.contains(b)));
        let ring = negative_boxes(&BoundingBox::new(7, 7, 6, 6), &frame);
        assert_eq!(ring.len(), 8);
    }

    #[test]
    fn iou_examples() {
        let a = BoundingBox::new(0, 0, 4, 4);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&a.shifted(10, 0)), 0.0);
        assert_abs_diff_eq!(a.iou(&a.shifted(2, 0)), 8.0 / 24.0, epsilon = 1e-15);
    }

    fn arb_model() -> impl Strategy<Value = TrackerModel> {
        (1usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec(-50.0f64..50.0, n),
                proptest::collection::vec(VAR_FLOOR..10.0, n),
                proptest::collection::vec(-50.0f64..50.0, n),
                proptest::collection::vec(VAR_FLOOR..10.0, n),
                0.0f64..=1.0,
            )
                .prop_map(|(pm, pv, nm, nv, lambda)| TrackerModel {
                    pos_mean: pm,
                    pos_var: pv,
                    neg_mean: nm,
                    neg_var: nv,
                    lambda,
                })
        })
    }

    proptest! {
        #[test]
        fn lambda_one_is_a_fixed_point(m in arb_model(), shift in -100.0f64..100.0) {
            let pos: Vec<f64> = m.pos_mean.iter().map(|v| v + shift).collect();
            let negs = vec![m.neg_mean.iter().map(|v| v - shift).collect::<Vec<_>>()];
            prop_assert_eq!(m.update_model(&pos, &negs, 1.0).unwrap(), m);
        }

        #[test]
        fn mean_update_contracts(m in arb_model(), lambda in 0.0f64..=1.0, shift in -100.0f64..100.0) {
            let pos: Vec<f64> = m.pos_mean.iter().map(|v| v + shift).collect();
            let u = m.update_model(&pos, &[], lambda).unwrap();
            for i in 0..m.num_features() {
                let before = (m.pos_mean[i] - pos[i]).abs();
                let after = (u.pos_mean[i] - pos[i]).abs();
                prop_assert!((after - lambda * before).abs() <= 1e-9 * (1.0 + before));
            }
        }

        #[test]
        fn search_is_translation_consistent(dx in -3i64..=3, dy in -3i64..=3, seed in 0u64..50) {
            let fx = SparseFeatureExtractor::new(20, 4, 4, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<f64> = (0..32 * 32).map(|_| rng.random::<f64>()).collect();
            let frame = Frame::new(32, 32, base.clone()).unwrap();
            let start = BoundingBox::new(14, 14, 4, 4);
            let tracker = Tracker::start(fx.clone(), &frame, start, 2, 0.3).unwrap();
            // content moved by (dx, dy), sampled from the same random field
            let moved: Vec<f64> = (0..32 * 32)
                .map(|i| {
                    let (r, c) = ((i / 32) as i64 - dy, (i % 32) as i64 - dx);
                    if (0..32).contains(&r) && (0..32).contains(&c) { base[(r * 32 + c) as usize] } else { 0.0 }
                })
                .collect();
            let moved = Frame::new(32, 32, moved).unwrap();
            let probe = start.shifted(1, -1);
            let a = search(&tracker.model, &fx, &frame, &probe, 2).unwrap();
            let b = search(&tracker.model, &fx, &moved, &probe.shifted(dx, dy), 2).unwrap();
            prop_assert_eq!(b, a.shifted(dx, dy));
        }
    }
}

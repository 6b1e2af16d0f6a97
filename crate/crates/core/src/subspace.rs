//! Per-camera generative model: an affine subspace fitted to recent patch
//! vectors, and the distance of a new patch to it.
//!
//! The subspace is stored as a mean, an orthonormal basis and the singular
//! values ("weights") of the centered data, so that
//! `basis * diag(weights)^2 * basis^T` is the (decayed) scatter matrix. A new
//! sample is folded in with a rank-one SVD update of that factorization, in
//! the style of sequential Karhunen-Loeve updates:
//!
//! 1. decay the weights by `sqrt(forgetting)`,
//! 2. append `sqrt(n / (n + 1)) * (y - mean)` as an extra column, which also
//!    accounts for the mean shift,
//! 3. take the SVD of the small `(r + 1) x (r + 1)` core matrix and rotate the
//!    extended basis,
//! 4. keep the `rank_cap` largest directions and re-orthonormalize.
//!
//! With `forgetting = 1` and no truncation this reproduces the batch SVD of
//! all samples seen so far.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Posterior above which [`AffineSubspace::gated_update`] skips the update.
pub const DEFAULT_GATE_THRESHOLD: f64 = 0.5;

// Directions whose weight falls below this fraction of the data scale are
// dropped.
const PRUNE_RELATIVE: f64 = 1e-12;
// A new residual direction is ignored when it is this small relative to the
// whole innovation.
const IN_SPAN_RELATIVE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubspaceError {
    #[error("need at least 2 patches to fit a subspace, got {0}")]
    InsufficientData(usize),
    #[error("patch has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("patch dimension must be at least 1")]
    EmptyPatch,
    #[error("forgetting factor {0} must lie in (0, 1]")]
    InvalidForgetting(f64),
    #[error("malformed subspace snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T, E = SubspaceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineSubspace {
    mean: DVector<f64>,
    basis: DMatrix<f64>,
    weights: DVector<f64>,
    effective_count: f64,
}

impl AffineSubspace {
    /// Sample mean plus the top `rank` left singular directions of the
    /// centered patches. A rank above `min(d, count - 1)` is clipped.
    pub fn init_from_batch<P: AsRef<[f64]>>(patches: &[P], rank: usize) -> Result<Self> {
        if patches.len() < 2 {
            return Err(SubspaceError::InsufficientData(patches.len()));
        }
        let d = patches[0].as_ref().len();
        if d == 0 {
            return Err(SubspaceError::EmptyPatch);
        }
        for p in patches {
            check_dim(d, p.as_ref())?;
        }
        let k = patches.len();
        let max_rank = d.min(k - 1);
        let rank = if rank > max_rank {
            log::warn!("subspace rank {rank} clipped to {max_rank} (d = {d}, {k} patches)");
            max_rank
        } else {
            rank
        };

        let data = DMatrix::from_fn(d, k, |i, j| patches[j].as_ref()[i]);
        let mean = data.column_mean();
        let centered = DMatrix::from_fn(d, k, |i, j| data[(i, j)] - mean[i]);
        let scale = data.amax();
        let (u, sv) = left_singular(&centered);
        let order = descending(sv.as_slice());
        let keep: Vec<usize> = order
            .into_iter()
            .filter(|&i| sv[i] > PRUNE_RELATIVE * scale.max(f64::MIN_POSITIVE))
            .take(rank)
            .collect();
        let basis = DMatrix::from_fn(d, keep.len(), |i, j| u[(i, keep[j])]);
        let weights = DVector::from_iterator(keep.len(), keep.iter().map(|&i| sv[i]));
        let mut space = AffineSubspace {
            mean,
            basis,
            weights,
            effective_count: k as f64,
        };
        space.reorthonormalize();
        Ok(space)
    }

    /// Degenerate subspace made of a single point.
    pub fn point(mean: &[f64]) -> Result<Self> {
        if mean.is_empty() {
            return Err(SubspaceError::EmptyPatch);
        }
        Ok(AffineSubspace {
            mean: DVector::from_column_slice(mean),
            basis: DMatrix::zeros(mean.len(), 0),
            weights: DVector::zeros(0),
            effective_count: 1.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn effective_count(&self) -> f64 {
        self.effective_count
    }

    /// `max |B^T B - I|`, for checking that the basis stays orthonormal.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.basis.transpose() * &self.basis;
        let r = gram.nrows();
        (gram - DMatrix::identity(r, r)).amax()
    }

    /// Euclidean distance from `y` to the affine subspace.
    pub fn residual_distance(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), y)?;
        let centered = DVector::from_column_slice(y) - &self.mean;
        let coords = self.basis.transpose() * &centered;
        Ok((centered - &self.basis * coords).norm())
    }

    /// Residual distance divided by `sqrt(d)`, independent of patch size.
    pub fn scaled_residual(&self, y: &[f64]) -> Result<f64> {
        Ok(self.residual_distance(y)? / (self.dim() as f64).sqrt())
    }

    /// Folds `y` into the subspace, keeping at most `rank_cap` directions.
    pub fn update(&self, y: &[f64], forgetting: f64, rank_cap: usize) -> Result<Self> {
        check_dim(self.dim(), y)?;
        if !(forgetting > 0.0 && forgetting <= 1.0) {
            return Err(SubspaceError::InvalidForgetting(forgetting));
        }
        let d = self.dim();
        let decayed_count = forgetting * self.effective_count;
        let count = decayed_count + 1.0;
        let innovation = DVector::from_column_slice(y) - &self.mean;
        let mean = &self.mean + &innovation / count;
        let column = &innovation * (decayed_count / count).sqrt();
        let decayed = &self.weights * forgetting.sqrt();

        let scale = self.mean.amax().max(innovation.amax()).max(f64::MIN_POSITIVE);
        if column.norm() <= PRUNE_RELATIVE * scale {
            return Ok(AffineSubspace {
                mean,
                basis: self.basis.clone(),
                weights: decayed,
                effective_count: count,
            });
        }

        let r = self.rank();
        let coords = self.basis.transpose() * &column;
        let orthogonal = &column - &self.basis * &coords;
        let orth_norm = orthogonal.norm();
        let grows = orth_norm > IN_SPAN_RELATIVE * column.norm();
        let size = if grows { r + 1 } else { r };

        let mut core = DMatrix::zeros(size, r + 1);
        for i in 0..r {
            core[(i, i)] = decayed[i];
            core[(i, r)] = coords[i];
        }
        let mut extended = DMatrix::zeros(d, size);
        extended.columns_mut(0, r).copy_from(&self.basis);
        if grows {
            core[(r, r)] = orth_norm;
            extended.set_column(r, &(orthogonal / orth_norm));
        }

        let (u, sv) = left_singular(&core);
        let sv = &sv;
        let top = sv.amax().max(f64::MIN_POSITIVE);
        let keep: Vec<usize> = descending(sv.as_slice())
            .into_iter()
            .filter(|&i| sv[i] > PRUNE_RELATIVE * top.max(scale))
            .take(rank_cap.min(d))
            .collect();
        let rotation = DMatrix::from_fn(size, keep.len(), |i, j| u[(i, keep[j])]);
        let mut next = AffineSubspace {
            mean,
            basis: extended * rotation,
            weights: DVector::from_iterator(keep.len(), keep.iter().map(|&i| sv[i])),
            effective_count: count,
        };
        next.reorthonormalize();
        Ok(next)
    }

    /// Returns `self` unchanged when `p_occlusion > gate_threshold`,
    /// otherwise [`AffineSubspace::update`].
    pub fn gated_update(
        &self,
        y: &[f64],
        forgetting: f64,
        rank_cap: usize,
        p_occlusion: f64,
        gate_threshold: f64,
    ) -> Result<Self> {
        if p_occlusion > gate_threshold {
            check_dim(self.dim(), y)?;
            return Ok(self.clone());
        }
        self.update(y, forgetting, rank_cap)
    }

    // Two passes of modified Gram-Schmidt; drops columns that collapse.
    fn reorthonormalize(&mut self) {
        let mut kept_cols: Vec<DVector<f64>> = Vec::with_capacity(self.rank());
        let mut kept_weights = Vec::with_capacity(self.rank());
        for (j, w) in self.weights.iter().enumerate() {
            let mut v = self.basis.column(j).clone_owned();
            for _ in 0..2 {
                for q in &kept_cols {
                    let c = q.dot(&v);
                    v.axpy(-c, q, 1.0);
                }
            }
            let norm = v.norm();
            if norm > 1e-8 {
                kept_cols.push(v / norm);
                kept_weights.push(*w);
            }
        }
        self.basis = if kept_cols.is_empty() {
            DMatrix::zeros(self.dim(), 0)
        } else {
            DMatrix::from_columns(&kept_cols)
        };
        self.weights = DVector::from_vec(kept_weights);
    }

    /// Text snapshot: a header line, then `mean`, `weights` and one `basis`
    /// line per direction, comma separated.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "format_version=1 dim={} rank={} effective_count={}\n",
            self.dim(),
            self.rank(),
            self.effective_count
        );
        let row = |out: &mut String, tag: &str, values: &mut dyn Iterator<Item = f64>| {
            out.push_str(tag);
            for v in values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        };
        row(&mut out, "mean", &mut self.mean.iter().copied());
        row(&mut out, "weights", &mut self.weights.iter().copied());
        for col in self.basis.column_iter() {
            row(&mut out, "basis", &mut col.iter().copied());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| SubspaceError::Snapshot(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty snapshot"))?;
        let mut dim = None;
        let mut rank = None;
        let mut count = None;
        for field in header.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(field))?;
            match k {
                "format_version" if v == "1" => {}
                "format_version" => return Err(bad("unsupported format_version")),
                "dim" => dim = v.parse::<usize>().ok(),
                "rank" => rank = v.parse::<usize>().ok(),
                "effective_count" => count = v.parse::<f64>().ok(),
                _ => return Err(bad(field)),
            }
        }
        let (dim, rank, effective_count) = match (dim, rank, count) {
            (Some(d), Some(r), Some(c)) => (d, r, c),
            _ => return Err(bad("incomplete header")),
        };
        let mut parse_row = |tag: &str, len: usize| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad("missing row"))?;
            let mut fields = line.split(',');
            if fields.next() != Some(tag) {
                return Err(bad(&format!("expected {tag} row")));
            }
            let values = fields
                .map(|f| f.trim().parse::<f64>().map_err(|e| bad(&e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != len {
                return Err(bad(&format!("{tag} row has {} values, expected {len}", values.len())));
            }
            Ok(values)
        };
        let mean = DVector::from_vec(parse_row("mean", dim)?);
        let weights = DVector::from_vec(parse_row("weights", rank)?);
        let mut cols = Vec::with_capacity(rank);
        for _ in 0..rank {
            cols.push(DVector::from_vec(parse_row("basis", dim)?));
        }
        let basis = if rank == 0 {
            DMatrix::zeros(dim, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Ok(AffineSubspace {
            mean,
            basis,
            weights,
            effective_count,
        })
    }
}

fn check_dim(expected: usize, y: &[f64]) -> Result<()> {
    if y.len() != expected {
        return Err(SubspaceError::DimensionMismatch {
            expected,
            got: y.len(),
        });
    }
    Ok(())
}

// Thin left singular vectors and singular values. nalgebra's SVD loses
// accuracy on rank-deficient inputs when vectors are requested, so this goes
// through faer.
fn left_singular(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return (DMatrix::zeros(rows, 0), DVector::zeros(0));
    }
    let a = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = a.thin_svd().expect("SVD of a finite matrix");
    let u = svd.U();
    let s = svd.S().column_vector();
    (
        DMatrix::from_fn(rows, k, |i, j| u[(i, j)]),
        DVector::from_fn(k, |i, _| s[i]),
    )
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// How the per-camera subspace is maintained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorMode {
    /// Rank-one updates with exponential forgetting.
    Incremental,
    /// Batch refit on the last `size` accepted patches.
    Window { size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorConfig {
    pub rank_cap: usize,
    pub forgetting: f64,
    /// Patches collected before the first fit.
    pub init_window: usize,
    /// Standard deviation of the isotropic jitter added to the initial
    /// patches.
    pub init_jitter: f64,
    pub gate_threshold: f64,
    pub mode: PredictorMode,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            rank_cap: 5,
            forgetting: 0.98,
            init_window: 5,
            init_jitter: 1e-3,
            gate_threshold: DEFAULT_GATE_THRESHOLD,
            mode: PredictorMode::Incremental,
            seed: 0,
        }
    }
}

/// Stateful wrapper driving one camera's subspace: warm-up, then gated
/// updates. Residuals are reported scaled by `1 / sqrt(d)`.
#[derive(Debug, Clone)]
pub struct SubspacePredictor {
    cfg: PredictorConfig,
    warmup: Vec<Vec<f64>>,
    window: VecDeque<Vec<f64>>,
    space: Option<AffineSubspace>,
    rng: ChaCha8Rng,
}

impl SubspacePredictor {
    pub fn new(cfg: PredictorConfig) -> Result<Self> {
        if !(cfg.forgetting > 0.0 && cfg.forgetting <= 1.0) {
            return Err(SubspaceError::InvalidForgetting(cfg.forgetting));
        }
        Ok(SubspacePredictor {
            cfg,
            warmup: Vec::new(),
            window: VecDeque::new(),
            space: None,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn space(&self) -> Option<&AffineSubspace> {
        self.space.as_ref()
    }

    pub fn is_warm(&self) -> bool {
        self.space.is_some()
    }

    /// Scaled prediction error of `y`; 0 until the first fit.
    pub fn prediction_error(&self, y: &[f64]) -> Result<f64> {
        match &self.space {
            Some(space) => space.scaled_residual(y),
            None => {
                if let Some(first) = self.warmup.first() {
                    check_dim(first.len(), y)?;
                }
                Ok(0.0)
            }
        }
    }

    /// Learns from `y` unless `p_occlusion` is above the gate threshold.
    pub fn learn(&mut self, y: &[f64], p_occlusion: f64) -> Result<()> {
        let Some(space) = &self.space else {
            if let Some(first) = self.warmup.first() {
                check_dim(first.len(), y)?;
            } else if y.is_empty() {
                return Err(SubspaceError::EmptyPatch);
            }
            self.warmup.push(y.to_vec());
            if self.warmup.len() >= self.cfg.init_window.max(1) {
                self.fit_initial()?;
            }
            return Ok(());
        };
        match self.cfg.mode {
            PredictorMode::Incremental => {
                self.space = Some(space.gated_update(
                    y,
                    self.cfg.forgetting,
                    self.cfg.rank_cap,
                    p_occlusion,
                    self.cfg.gate_threshold,
                )?);
            }
            PredictorMode::Window { size } => {
                check_dim(space.dim(), y)?;
                if p_occlusion > self.cfg.gate_threshold {
                    return Ok(());
                }
                self.window.push_back(y.to_vec());
                while self.window.len() > size.max(2) {
                    self.window.pop_front();
                }
                let patches: Vec<&[f64]> = self.window.iter().map(Vec::as_slice).collect();
                self.space = Some(AffineSubspace::init_from_batch(&patches, self.cfg.rank_cap)?);
            }
        }
        Ok(())
    }

    fn fit_initial(&mut self) -> Result<()> {
        let noise = Normal::new(0.0, self.cfg.init_jitter.max(0.0)).expect("finite jitter");
        let mut patches: Vec<Vec<f64>> = std::mem::take(&mut self.warmup)
            .into_iter()
            .map(|p| p.into_iter().map(|v| v + noise.sample(&mut self.rng)).collect())
            .collect();
        if patches.len() < 2 {
            // a single patch: duplicate it; jitter separates the copies
            let copy = patches[0]
                .iter()
                .map(|v| v + noise.sample(&mut self.rng))
                .collect();
            patches.push(copy);
        }
        let rank = self.cfg.rank_cap.min(patches.len() - 1);
        self.space = Some(AffineSubspace::init_from_batch(&patches, rank)?);
        if let PredictorMode::Window { .. } = self.cfg.mode {
            self.window = patches.into_iter().collect();
        }
        Ok(())
    }
}

//! Exact recursive Bayesian filtering over the joint hidden state
//! `(S(t), O_1(t), .., O_N(t))`.
//!
//! `S` is the global sudden-appearance-change bit and `O_n` is the occlusion
//! bit of camera `n`. The only observation is the per-camera prediction error
//! `z_n(t)`. Given the hidden state, the errors are independent across
//! cameras: exponential with mean `mu` when the camera is normal
//! (`S = O_n = 0`) and uniform on `[0, M]` otherwise.
//!
//! Each bit follows its own two-state Markov chain and the chains are
//! independent, so the joint transition is a product of `2 x 2` matrices.
//! The prediction step exploits that product by contracting one axis at a
//! time, which costs `O((N + 1) 2^(N + 1))` per step instead of the
//! `O(4^(N + 1))` of a dense sum. [`step_dense`] keeps the dense sum around as
//! a reference.
//!
//! # State indexing
//!
//! A joint state has the canonical index `s * 2^N + sum_n o[n] * 2^n`: bit `n`
//! holds `o[n]` and bit `N` holds `s`. [`BeliefState::probs`] and the belief
//! CSV rows use this order.

use std::fmt;

use thiserror::Error;

/// Largest supported number of cameras (`2^17` joint states).
pub const MAX_CAMERAS: usize = 16;

/// `ln(1e-300)`: lower bound applied to the normal-branch log density.
pub const LOG_DENSITY_FLOOR: f64 = -690.775_527_898_213_7;

/// Tolerance on row sums of transition matrices and on belief totals.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("number of cameras must be between 1 and {MAX_CAMERAS}, got {0}")]
    InvalidCameraCount(usize),
    #[error("emission parameters must be finite and positive (mu = {mu}, m_max = {m_max})")]
    InvalidEmission { mu: f64, m_max: f64 },
    #[error("transition matrix {name}: row {row} = ({a}, {b}) is not a probability distribution")]
    NotStochastic {
        name: String,
        row: usize,
        a: f64,
        b: f64,
    },
    #[error("expected {expected} occlusion chains, got {got}")]
    ChainCount { expected: usize, got: usize },
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("observation has {got} cameras, model has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("residual for camera {camera} is {value}; residuals must be finite and nonnegative")]
    InvalidObservation { camera: usize, value: f64 },
    #[error("camera index {index} out of range for {n_cameras} cameras")]
    CameraIndex { index: usize, n_cameras: usize },
    #[error("posterior normalizer vanished or is not finite")]
    NumericalUnderflow,
    #[error("observation stream is empty")]
    EmptyStream,
    #[error("at t = {t}: {source}")]
    AtTime {
        t: u64,
        #[source]
        source: Box<FilterError>,
    },
}

pub type Result<T, E = FilterError> = std::result::Result<T, E>;

fn check_cameras(n: usize) -> Result<()> {
    if n == 0 || n > MAX_CAMERAS {
        return Err(FilterError::InvalidCameraCount(n));
    }
    Ok(())
}

/// Number of joint states for `n` cameras.
#[inline]
pub fn state_count(n_cameras: usize) -> usize {
    1 << (n_cameras + 1)
}

/// One joint hidden state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HiddenState {
    /// Sudden appearance change active.
    pub change: bool,
    /// `occluded[n]` is set when camera `n` is occluded.
    pub occluded: Vec<bool>,
}

impl HiddenState {
    pub fn new(change: bool, occluded: Vec<bool>) -> Result<Self> {
        check_cameras(occluded.len())?;
        Ok(HiddenState { change, occluded })
    }

    /// The all-normal state.
    pub fn normal(n_cameras: usize) -> Self {
        HiddenState {
            change: false,
            occluded: vec![false; n_cameras],
        }
    }

    pub fn n_cameras(&self) -> usize {
        self.occluded.len()
    }

    pub fn index(&self) -> usize {
        let n = self.n_cameras();
        let o = self
            .occluded
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, &b)| acc | (usize::from(b) << i));
        (usize::from(self.change) << n) | o
    }

    pub fn from_index(index: usize, n_cameras: usize) -> Result<Self> {
        check_cameras(n_cameras)?;
        if index >= state_count(n_cameras) {
            return Err(FilterError::InvalidBelief(format!(
                "state index {index} out of range for {n_cameras} cameras"
            )));
        }
        Ok(HiddenState {
            change: index >> n_cameras & 1 == 1,
            occluded: (0..n_cameras).map(|i| index >> i & 1 == 1).collect(),
        })
    }

    /// Whether camera `camera` sees the uniform (anomalous) emission branch.
    pub fn is_anomalous(&self, camera: usize) -> bool {
        self.change || self.occluded[camera]
    }
}

impl fmt::Display for HiddenState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(s={}, o=[", u8::from(self.change))?;
        for (i, o) in self.occluded.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", u8::from(*o))?;
        }
        f.write_str("])")
    }
}

/// Parameters of the per-camera residual law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionParams {
    mu: f64,
    m_max: f64,
}

fn calibration_estimates(residuals: &[f64]) -> Result<(f64, f64)> {
    let mut sorted: Vec<f64> = residuals
        .iter()
        .copied()
        .filter(|z| z.is_finite() && *z >= 0.0)
        .collect();
    if sorted.is_empty() {
        return Err(FilterError::InvalidEmission {
            mu: f64::NAN,
            m_max: f64::NAN,
        });
    }
    sorted.sort_by(f64::total_cmp);
    let mu = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok((mu, 2.0 * quantile_sorted(&sorted, 0.999)))
}

impl EmissionParams {
    /// Validates `mu > 0` and `m_max > 0`. Logs a warning when
    /// `m_max < 10 mu`, where the two branches are hard to tell apart.
    pub fn new(mu: f64, m_max: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0 && m_max.is_finite() && m_max > 0.0) {
            return Err(FilterError::InvalidEmission { mu, m_max });
        }
        let params = EmissionParams { mu, m_max };
        if params.weak_separation() {
            log::warn!(
                "m_max = {m_max} is less than 10 * mu = {}; anomalies will be hard to detect",
                10.0 * mu
            );
        }
        Ok(params)
    }

    /// Estimates `mu` as the mean of calibration residuals and `m_max` as
    /// twice their 99.9th percentile.
    pub fn calibrate(residuals: &[f64]) -> Result<Self> {
        let (mu, m_max) = calibration_estimates(residuals)?;
        EmissionParams::new(mu, m_max)
    }

    /// [`EmissionParams::calibrate`] with `m_max` raised to at least
    /// `min_ratio * mu`.
    pub fn calibrate_separated(residuals: &[f64], min_ratio: f64) -> Result<Self> {
        let (mu, m_max) = calibration_estimates(residuals)?;
        EmissionParams::new(mu, m_max.max(min_ratio * mu))
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn m_max(&self) -> f64 {
        self.m_max
    }

    pub fn weak_separation(&self) -> bool {
        self.m_max < 10.0 * self.mu
    }

    /// Log density of a residual under the normal or anomalous branch.
    ///
    /// Above `m_max` the anomalous branch keeps the value `1/M`, as if the
    /// residual were clamped to `M`. The normal branch is floored at
    /// [`LOG_DENSITY_FLOOR`].
    #[inline]
    pub fn log_density(&self, z: f64, anomalous: bool) -> f64 {
        if anomalous {
            -self.m_max.ln()
        } else {
            (-z / self.mu - self.mu.ln()).max(LOG_DENSITY_FLOOR)
        }
    }

    #[inline]
    pub fn density(&self, z: f64, anomalous: bool) -> f64 {
        self.log_density(z, anomalous).exp()
    }
}

// Linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Density of a single residual `z` under the given branch.
pub fn emission_density(z: f64, anomalous: bool, params: &EmissionParams) -> f64 {
    params.density(z, anomalous)
}

/// Row-stochastic `2 x 2` matrix; `rows[i][j] = P[next = j | prev = i]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chain {
    rows: [[f64; 2]; 2],
}

impl Chain {
    pub fn new(rows: [[f64; 2]; 2]) -> Result<Self> {
        Self::validated(rows, "chain")
    }

    fn validated(rows: [[f64; 2]; 2], name: &str) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            let ok = row.iter().all(|p| (0.0..=1.0).contains(p))
                && (row[0] + row[1] - 1.0).abs() <= STOCHASTIC_TOLERANCE;
            if !ok {
                return Err(FilterError::NotStochastic {
                    name: name.to_string(),
                    row: i,
                    a: row[0],
                    b: row[1],
                });
            }
        }
        Ok(Chain { rows })
    }

    /// Chain that stays normal with probability `stay_normal` and stays
    /// anomalous with probability `stay_anomalous`.
    pub fn sticky(stay_normal: f64, stay_anomalous: f64) -> Result<Self> {
        Self::new([
            [stay_normal, 1.0 - stay_normal],
            [1.0 - stay_anomalous, stay_anomalous],
        ])
    }

    pub fn identity() -> Self {
        Chain {
            rows: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    #[inline]
    pub fn prob(&self, from: bool, to: bool) -> f64 {
        self.rows[usize::from(from)][usize::from(to)]
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        self.rows
    }

    /// Stationary probability of the anomalous state (0 when the chain never
    /// leaves the normal state, 1 when it never leaves the anomalous one).
    pub fn stationary_anomalous(&self) -> f64 {
        let up = self.rows[0][1];
        let down = self.rows[1][0];
        if up + down == 0.0 {
            0.0
        } else {
            up / (up + down)
        }
    }
}

/// Transition law of the joint state: independent chains for `S` and for
/// every `O_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionParams {
    pub s_chain: Chain,
    pub o_chains: Vec<Chain>,
}

impl TransitionParams {
    pub fn new(s_chain: Chain, o_chains: Vec<Chain>) -> Result<Self> {
        check_cameras(o_chains.len())?;
        Ok(TransitionParams { s_chain, o_chains })
    }

    /// Every camera uses the same occlusion chain.
    pub fn shared(s_chain: Chain, o_chain: Chain, n_cameras: usize) -> Result<Self> {
        Self::new(s_chain, vec![o_chain; n_cameras])
    }

    pub fn n_cameras(&self) -> usize {
        self.o_chains.len()
    }
}

/// Product of the per-chain transition probabilities.
pub fn transition_prob(
    prev: &HiddenState,
    next: &HiddenState,
    params: &TransitionParams,
) -> Result<f64> {
    let n = params.n_cameras();
    for len in [prev.n_cameras(), next.n_cameras()] {
        if len != n {
            return Err(FilterError::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let o: f64 = params
        .o_chains
        .iter()
        .zip(prev.occluded.iter().zip(&next.occluded))
        .map(|(chain, (&a, &b))| chain.prob(a, b))
        .product();
    Ok(params.s_chain.prob(prev.change, next.change) * o)
}

/// Probability distribution over the joint states at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    probs: Vec<f64>,
    n_cameras: usize,
    t: u64,
}

impl BeliefState {
    /// Checks nonnegativity and that the entries sum to 1 within
    /// [`STOCHASTIC_TOLERANCE`].
    pub fn new(probs: Vec<f64>, n_cameras: usize, t: u64) -> Result<Self> {
        check_cameras(n_cameras)?;
        if probs.len() != state_count(n_cameras) {
            return Err(FilterError::InvalidBelief(format!(
                "{} entries, expected {}",
                probs.len(),
                state_count(n_cameras)
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(FilterError::InvalidBelief(format!("entry {p} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(FilterError::InvalidBelief(format!("entries sum to {total}")));
        }
        Ok(BeliefState {
            probs,
            n_cameras,
            t,
        })
    }

    pub fn uniform(n_cameras: usize) -> Result<Self> {
        check_cameras(n_cameras)?;
        let k = state_count(n_cameras);
        Ok(BeliefState {
            probs: vec![1.0 / k as f64; k],
            n_cameras,
            t: 0,
        })
    }

    /// All mass on a single state.
    pub fn concentrated(state: &HiddenState) -> Result<Self> {
        let n = state.n_cameras();
        check_cameras(n)?;
        let mut probs = vec![0.0; state_count(n)];
        probs[state.index()] = 1.0;
        Ok(BeliefState {
            probs,
            n_cameras: n,
            t: 0,
        })
    }

    /// `p_normal` on the all-normal state and the remainder spread evenly
    /// over the other states.
    pub fn mostly_normal(n_cameras: usize, p_normal: f64) -> Result<Self> {
        check_cameras(n_cameras)?;
        if !(0.0..=1.0).contains(&p_normal) {
            return Err(FilterError::InvalidBelief(format!(
                "p_normal = {p_normal} is not a probability"
            )));
        }
        let k = state_count(n_cameras);
        let rest = (1.0 - p_normal) / (k - 1) as f64;
        let mut probs = vec![rest; k];
        probs[0] = p_normal;
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(BeliefState {
            probs,
            n_cameras,
            t: 0,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn with_time(mut self, t: u64) -> Self {
        self.t = t;
        self
    }

    pub fn prob(&self, state: &HiddenState) -> f64 {
        self.probs[state.index()]
    }

    /// `P[S(t) = 1 | z(1:t)]`.
    pub fn marginal_change(&self) -> f64 {
        let half = 1 << self.n_cameras;
        self.probs[half..].iter().sum()
    }

    /// `P[O_n(t) = 1 | z(1:t)]`.
    pub fn marginal_occlusion(&self, camera: usize) -> Result<f64> {
        if camera >= self.n_cameras {
            return Err(FilterError::CameraIndex {
                index: camera,
                n_cameras: self.n_cameras,
            });
        }
        let bit = 1 << camera;
        Ok(self
            .probs
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit != 0)
            .map(|(_, p)| p)
            .sum())
    }

    pub fn marginals(&self) -> Marginals {
        let mut occ = vec![0.0; self.n_cameras];
        for (i, p) in self.probs.iter().enumerate() {
            for (n, acc) in occ.iter_mut().enumerate() {
                if i >> n & 1 == 1 {
                    *acc += p;
                }
            }
        }
        Marginals {
            t: self.t,
            p_change: self.marginal_change(),
            p_occlusion: occ,
        }
    }

    /// Flat CSV row: `t`, then the probabilities in canonical index order.
    pub fn to_csv_row(&self) -> String {
        let mut row = self.t.to_string();
        for p in &self.probs {
            row.push(',');
            row.push_str(&p.to_string());
        }
        row
    }

    /// Parses a row written by [`BeliefState::to_csv_row`].
    pub fn from_csv_row(row: &str, n_cameras: usize) -> Result<Self> {
        let mut fields = row.trim().split(',');
        let t = fields
            .next()
            .and_then(|f| f.trim().parse::<u64>().ok())
            .ok_or_else(|| FilterError::InvalidBelief(format!("bad time field in {row:?}")))?;
        let probs = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| FilterError::InvalidBelief(format!("{f:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        BeliefState::new(probs, n_cameras, t)
    }
}

/// CSV header matching [`BeliefState::to_csv_row`].
pub fn belief_csv_header(n_cameras: usize) -> String {
    let mut header = String::from("t");
    for i in 0..state_count(n_cameras) {
        header.push_str(&format!(",p{i}"));
    }
    header
}

/// Filtered marginals at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub t: u64,
    pub p_change: f64,
    pub p_occlusion: Vec<f64>,
}

/// Nonnegative per-camera prediction errors at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if let Some((camera, &value)) = z
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(FilterError::InvalidObservation { camera, value });
        }
        Ok(Observation(z))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Observation {
    type Error = FilterError;

    fn try_from(z: Vec<f64>) -> Result<Self> {
        Observation::new(z)
    }
}

/// `ln P[z(t) | state]` for one state.
pub fn joint_log_likelihood(
    obs: &Observation,
    state: &HiddenState,
    params: &EmissionParams,
) -> Result<f64> {
    if obs.len() != state.n_cameras() {
        return Err(FilterError::DimensionMismatch {
            expected: state.n_cameras(),
            got: obs.len(),
        });
    }
    Ok(obs
        .values()
        .iter()
        .enumerate()
        .map(|(n, &z)| params.log_density(z, state.is_anomalous(n)))
        .sum())
}

/// `P[z(t) | state]`, the exponentiated [`joint_log_likelihood`].
pub fn joint_likelihood(
    obs: &Observation,
    state: &HiddenState,
    params: &EmissionParams,
) -> Result<f64> {
    joint_log_likelihood(obs, state, params).map(f64::exp)
}

/// Log likelihoods of all joint states, in canonical index order.
pub fn log_likelihood_table(obs: &Observation, params: &EmissionParams) -> Vec<f64> {
    let n = obs.len();
    let half = 1 << n;
    let anomalous = params.log_density(0.0, true);
    let normal: Vec<f64> = obs
        .values()
        .iter()
        .map(|&z| params.log_density(z, false))
        .collect();
    let mut table = vec![0.0; 2 * half];
    table[0] = normal.iter().sum();
    for idx in 1..half {
        let top = usize::BITS - 1 - idx.leading_zeros();
        let top = top as usize;
        table[idx] = table[idx ^ (1 << top)] + (anomalous - normal[top]);
    }
    let all_anomalous = anomalous * n as f64;
    table[half..].fill(all_anomalous);
    table
}

/// Everything the filter needs: residual law, transition law and the belief
/// before the first observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub emission: EmissionParams,
    pub transitions: TransitionParams,
    /// Distribution of the hidden state at `t = 0`, before the first frame.
    pub prior: BeliefState,
}

impl ModelParams {
    pub fn new(
        emission: EmissionParams,
        transitions: TransitionParams,
        prior: BeliefState,
    ) -> Result<Self> {
        if prior.n_cameras() != transitions.n_cameras() {
            return Err(FilterError::DimensionMismatch {
                expected: transitions.n_cameras(),
                got: prior.n_cameras(),
            });
        }
        Ok(ModelParams {
            emission,
            transitions,
            prior: prior.with_time(0),
        })
    }

    /// `mu = 1`, `M = 20`, `S` stays (0.99, 0.80), every `O_n` stays
    /// (0.95, 0.70), prior 0.99 on the all-normal state.
    pub fn with_defaults(n_cameras: usize) -> Result<Self> {
        let transitions = TransitionParams::shared(
            Chain::sticky(0.99, 0.80)?,
            Chain::sticky(0.95, 0.70)?,
            n_cameras,
        )?;
        ModelParams::new(
            EmissionParams::new(1.0, 20.0)?,
            transitions,
            BeliefState::mostly_normal(n_cameras, 0.99)?,
        )
    }

    pub fn n_cameras(&self) -> usize {
        self.transitions.n_cameras()
    }
}

// Applies one 2x2 chain along the axis selected by `bit`.
fn contract_axis(v: &mut [f64], bit: usize, chain: &Chain) {
    let [[p00, p01], [p10, p11]] = chain.rows;
    for idx in 0..v.len() {
        if idx & bit == 0 {
            let a = v[idx];
            let b = v[idx | bit];
            v[idx] = a * p00 + b * p10;
            v[idx | bit] = a * p01 + b * p11;
        }
    }
}

/// One-step prediction `sum_x' P[x'] P[x | x']` using the factored chains.
pub fn predict(belief: &BeliefState, transitions: &TransitionParams) -> Result<Vec<f64>> {
    let n = transitions.n_cameras();
    if belief.n_cameras() != n {
        return Err(FilterError::DimensionMismatch {
            expected: n,
            got: belief.n_cameras(),
        });
    }
    let mut v = belief.probs.clone();
    for (cam, chain) in transitions.o_chains.iter().enumerate() {
        contract_axis(&mut v, 1 << cam, chain);
    }
    contract_axis(&mut v, 1 << n, &transitions.s_chain);
    Ok(v)
}

/// Extra information about a filter step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepDiagnostics {
    /// Every joint likelihood was log-zero and the predicted belief was
    /// returned unchanged.
    pub fell_back: bool,
}

/// Posterior at `t` from the posterior at `t - 1` and the residuals at `t`.
pub fn step(belief: &BeliefState, obs: &Observation, params: &ModelParams) -> Result<BeliefState> {
    step_with_diagnostics(belief, obs, params).map(|(b, _)| b)
}

/// [`step`], also reporting whether the underflow fallback was taken.
pub fn step_with_diagnostics(
    belief: &BeliefState,
    obs: &Observation,
    params: &ModelParams,
) -> Result<(BeliefState, StepDiagnostics)> {
    let n = params.n_cameras();
    if obs.len() != n {
        return Err(FilterError::DimensionMismatch {
            expected: n,
            got: obs.len(),
        });
    }
    let predicted = predict(belief, &params.transitions)?;
    let table = log_likelihood_table(obs, &params.emission);
    let log_post: Vec<f64> = predicted
        .iter()
        .zip(&table)
        .map(|(&p, &ll)| if p > 0.0 { p.ln() + ll } else { f64::NEG_INFINITY })
        .collect();
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t = belief.t + 1;
    if !max.is_finite() {
        let total: f64 = predicted.iter().sum();
        let probs = predicted.iter().map(|p| p / total).collect();
        return Ok((
            BeliefState {
                probs,
                n_cameras: n,
                t,
            },
            StepDiagnostics { fell_back: true },
        ));
    }
    let mut probs: Vec<f64> = log_post.iter().map(|lp| (lp - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok((
        BeliefState {
            probs,
            n_cameras: n,
            t,
        },
        StepDiagnostics::default(),
    ))
}

/// Reference step: dense `O(4^(N+1))` sum over previous states, in linear
/// space. Fails with [`FilterError::NumericalUnderflow`] when the normalizer
/// underflows; [`step`] never does.
pub fn step_dense(
    belief: &BeliefState,
    obs: &Observation,
    params: &ModelParams,
) -> Result<BeliefState> {
    let n = params.n_cameras();
    if obs.len() != n || belief.n_cameras() != n {
        return Err(FilterError::DimensionMismatch {
            expected: n,
            got: obs.len(),
        });
    }
    let k = state_count(n);
    let states: Vec<HiddenState> = (0..k)
        .map(|i| HiddenState::from_index(i, n))
        .collect::<Result<_>>()?;
    let mut probs = vec![0.0; k];
    for (next, out) in states.iter().zip(probs.iter_mut()) {
        let mut predicted = 0.0;
        for (prev, &p) in states.iter().zip(&belief.probs) {
            predicted += p * transition_prob(prev, next, &params.transitions)?;
        }
        *out = predicted * joint_likelihood(obs, next, &params.emission)?;
    }
    let total: f64 = probs.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(FilterError::NumericalUnderflow);
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(BeliefState {
        probs,
        n_cameras: n,
        t: belief.t + 1,
    })
}

/// Streaming filter holding the current belief.
#[derive(Debug, Clone)]
pub struct Filter {
    params: ModelParams,
    belief: BeliefState,
    fallbacks: u64,
}

impl Filter {
    pub fn new(params: ModelParams) -> Self {
        let belief = params.prior.clone();
        Filter {
            params,
            belief,
            fallbacks: 0,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    /// Number of steps that took the all-underflow fallback so far.
    pub fn fallbacks(&self) -> u64 {
        self.fallbacks
    }

    pub fn push(&mut self, obs: &Observation) -> Result<&BeliefState> {
        let (next, diag) = step_with_diagnostics(&self.belief, obs, &self.params).map_err(|e| {
            FilterError::AtTime {
                t: self.belief.t + 1,
                source: Box::new(e),
            }
        })?;
        if diag.fell_back {
            self.fallbacks += 1;
        }
        self.belief = next;
        Ok(&self.belief)
    }
}

/// Filters a whole stream, returning every posterior and its marginals.
pub fn run(
    stream: &[Observation],
    params: &ModelParams,
) -> Result<Vec<(BeliefState, Marginals)>> {
    if stream.is_empty() {
        return Err(FilterError::EmptyStream);
    }
    let mut filter = Filter::new(params.clone());
    stream
        .iter()
        .map(|obs| {
            let belief = filter.push(obs)?.clone();
            let marginals = belief.marginals();
            Ok((belief, marginals))
        })
        .collect()
}

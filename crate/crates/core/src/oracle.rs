//! Brute-force filtered marginals by enumerating every hidden state
//! sequence.
//!
//! This is the reference the recursive filter is checked against, so it
//! shares only the parameter types with [`crate::filter`]. Emission densities
//! and joint transition probabilities are recomputed here from their
//! definitions, and sums use Neumaier compensation.
//!
//! For `x(1..T)` the weight of a sequence is
//! `P[x(1)] * prod_t P[x(t) | x(t-1)] * prod_t P[z(t) | x(t)]`, where
//! `P[x(1)]` is the prior at `t = 0` pushed through one transition. Filtered
//! marginals at `t` come from the prefixes of length `t`; a depth-first walk
//! over the prefix tree visits each of them once.

use thiserror::Error;

use crate::filter::{Marginals, ModelParams};

/// Largest `(2^(N+1))^T` the oracle accepts.
pub const ENUMERATION_LIMIT: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration of {sequences:e} sequences exceeds the limit of {ENUMERATION_LIMIT:e}")]
    TooLarge { sequences: f64 },
    #[error("observation at t = {t} has {got} cameras, model has {expected}")]
    DimensionMismatch { t: usize, expected: usize, got: usize },
    #[error("observation stream is empty")]
    EmptyStream,
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

fn density(params: &ModelParams, z: f64, anomalous: bool) -> f64 {
    let mu = params.emission.mu();
    let m = params.emission.m_max();
    if anomalous {
        // the uniform law is clamped to its value on [0, M]
        1.0 / m
    } else {
        (-z / mu).exp() / mu
    }
}

fn joint_transition(params: &ModelParams, n: usize, from: usize, to: usize) -> f64 {
    let bit = |x: usize, i: usize| x >> i & 1 == 1;
    let mut p = params.transitions.s_chain.prob(bit(from, n), bit(to, n));
    for (i, chain) in params.transitions.o_chains.iter().enumerate() {
        p *= chain.prob(bit(from, i), bit(to, i));
    }
    p
}

/// Exact `P[S(t)=1 | z(1:t)]` and `P[O_n(t)=1 | z(1:t)]` for every `t`.
pub fn brute_force_marginals(
    observations: &[Vec<f64>],
    params: &ModelParams,
) -> Result<Vec<Marginals>, OracleError> {
    let n = params.n_cameras();
    let k = 1usize << (n + 1);
    let horizon = observations.len();
    if horizon == 0 {
        return Err(OracleError::EmptyStream);
    }
    let sequences = (k as f64).powi(horizon as i32);
    if sequences > ENUMERATION_LIMIT {
        return Err(OracleError::TooLarge { sequences });
    }
    for (t, z) in observations.iter().enumerate() {
        if z.len() != n {
            return Err(OracleError::DimensionMismatch {
                t: t + 1,
                expected: n,
                got: z.len(),
            });
        }
    }

    let transition: Vec<Vec<f64>> = (0..k)
        .map(|from| (0..k).map(|to| joint_transition(params, n, from, to)).collect())
        .collect();

    // Emission tables, scaled per time step by their maximum. The scale
    // cancels when each time step is normalized.
    let emission: Vec<Vec<f64>> = observations
        .iter()
        .map(|z| {
            let row: Vec<f64> = (0..k)
                .map(|x| {
                    let change = x >> n & 1 == 1;
                    z.iter()
                        .enumerate()
                        .map(|(i, &zi)| density(params, zi, change || x >> i & 1 == 1))
                        .product()
                })
                .collect();
            let max = row.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                row.iter().map(|v| v / max).collect()
            } else {
                row
            }
        })
        .collect();

    let prior = params.prior.probs();
    let initial: Vec<f64> = (0..k)
        .map(|to| {
            let mut acc = CompensatedSum::default();
            for (from, &p) in prior.iter().enumerate() {
                acc.add(p * transition[from][to]);
            }
            acc.value()
        })
        .collect();

    let mut acc = vec![vec![CompensatedSum::default(); k]; horizon];
    let walk = Walk {
        transition: &transition,
        emission: &emission,
        horizon,
    };
    for x in 0..k {
        let w = initial[x] * emission[0][x];
        if w == 0.0 {
            continue;
        }
        acc[0][x].add(w);
        walk.descend(1, x, w, &mut acc);
    }

    Ok(acc
        .iter()
        .enumerate()
        .map(|(t, row)| {
            let joint: Vec<f64> = row.iter().map(CompensatedSum::value).collect();
            let mut total = CompensatedSum::default();
            joint.iter().for_each(|&v| total.add(v));
            let total = total.value();
            let mut change = CompensatedSum::default();
            let mut occ = vec![CompensatedSum::default(); n];
            for (x, &v) in joint.iter().enumerate() {
                if x >> n & 1 == 1 {
                    change.add(v);
                }
                for (i, o) in occ.iter_mut().enumerate() {
                    if x >> i & 1 == 1 {
                        o.add(v);
                    }
                }
            }
            Marginals {
                t: t as u64 + 1,
                p_change: change.value() / total,
                p_occlusion: occ.iter().map(|o| o.value() / total).collect(),
            }
        })
        .collect())
}

struct Walk<'a> {
    transition: &'a [Vec<f64>],
    emission: &'a [Vec<f64>],
    horizon: usize,
}

impl Walk<'_> {
    fn descend(&self, depth: usize, prev: usize, weight: f64, acc: &mut [Vec<CompensatedSum>]) {
        if depth == self.horizon {
            return;
        }
        let trans = &self.transition[prev];
        let emis = &self.emission[depth];
        for x in 0..trans.len() {
            let w = weight * trans[x] * emis[x];
            if w == 0.0 {
                continue;
            }
            acc[depth][x].add(w);
            self.descend(depth + 1, x, w, acc);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{BeliefState, Chain, EmissionParams, TransitionParams};
    use approx::assert_abs_diff_eq;

    fn identity_uniform(n: usize, mu: f64, m: f64) -> ModelParams {
        ModelParams::new(
            EmissionParams::new(mu, m).unwrap(),
            TransitionParams::shared(Chain::identity(), Chain::identity(), n).unwrap(),
            BeliefState::uniform(n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_frame_matches_hand_bayes() {
        let params = identity_uniform(1, 1.0, 10.0);
        let m = brute_force_marginals(&[vec![5.0]], &params).unwrap();
        let e5 = (-5.0f64).exp();
        assert_abs_diff_eq!(m[0].p_change, 0.2 / (e5 + 0.3), epsilon = 1e-15);
        assert_abs_diff_eq!(m[0].p_occlusion[0], 0.2 / (e5 + 0.3), epsilon = 1e-15);
    }

    #[test]
    fn repeated_observations_with_identity_chains_compound() {
        // with identity chains the posterior after t copies of z is the
        // prior times the t-th power of the likelihood
        let params = identity_uniform(1, 1.0, 10.0);
        let z = 2.5;
        let m = brute_force_marginals(&vec![vec![z]; 4], &params).unwrap();
        let mut belief = [0.25; 4];
        for (t, marg) in m.iter().enumerate() {
            let lik = [(-z).exp(), 0.1, 0.1, 0.1];
            let mut total = 0.0;
            for (b, l) in belief.iter_mut().zip(lik) {
                *b *= l;
                total += *b;
            }
            belief.iter_mut().for_each(|b| *b /= total);
            assert_abs_diff_eq!(marg.p_change, belief[2] + belief[3], epsilon = 1e-14);
            assert_abs_diff_eq!(marg.p_occlusion[0], belief[1] + belief[3], epsilon = 1e-14);
            assert_eq!(marg.t, t as u64 + 1);
        }
    }

    #[test]
    fn size_guard() {
        let params = identity_uniform(3, 1.0, 10.0);
        // 16^7 > 1e8
        let err = brute_force_marginals(&vec![vec![0.0; 3]; 7], &params).unwrap_err();
        assert!(matches!(err, OracleError::TooLarge { .. }));
        assert!(err.to_string().contains("1e8"));
        assert!(brute_force_marginals(&vec![vec![0.0; 3]; 6], &params).is_ok());
    }

    #[test]
    fn dimension_and_empty_errors() {
        let params = identity_uniform(2, 1.0, 10.0);
        assert_eq!(
            brute_force_marginals(&[], &params).unwrap_err(),
            OracleError::EmptyStream
        );
        assert!(matches!(
            brute_force_marginals(&[vec![0.0, 0.0], vec![1.0]], &params),
            Err(OracleError::DimensionMismatch { t: 2, .. })
        ));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::default();
        acc.add(1.0);
        for _ in 0..10 {
            acc.add(1e-17);
        }
        acc.add(-1.0);
        assert_abs_diff_eq!(acc.value(), 1e-16, epsilon = 1e-30);
    }
}

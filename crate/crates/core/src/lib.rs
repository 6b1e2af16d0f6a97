//! Detection of per-camera occlusions and global appearance changes in
//! multi-camera streams.
//!
//! Each camera reports a scalar prediction error per frame. A hidden state
//! holds one occlusion bit per camera and one global change bit, and
//! [`filter`] computes the exact filtered posterior over all of them. The
//! errors come from [`subspace`], an incrementally learned affine appearance
//! model per camera. [`control`] turns posteriors into tracker learning rates
//! and alarms for the tracker in [`tracker`].
//!
//! ```
//! use occhmm::filter::{run, ModelParams, Observation};
//!
//! let params = ModelParams::with_defaults(2).unwrap();
//! let stream: Vec<Observation> = [[0.3, 0.5], [15.0, 0.2], [14.0, 0.1]]
//!     .iter()
//!     .map(|z| Observation::new(z.to_vec()).unwrap())
//!     .collect();
//! let out = run(&stream, &params).unwrap();
//! let last = &out.last().unwrap().1;
//! assert!(last.p_occlusion[0] > 0.9);
//! assert!(last.p_occlusion[1] < 0.1);
//! ```

pub mod control;
pub mod eval;
pub mod filter;
pub mod oracle;
pub mod pipeline;
pub mod scene;
pub mod subspace;
pub mod tracker;

pub use control::{alarm, lambda_for, ControlConfig};
pub use filter::{
    run, step, BeliefState, Chain, EmissionParams, Filter, FilterError, HiddenState, Marginals,
    ModelParams, Observation, TransitionParams,
};
pub use oracle::brute_force_marginals;
pub use subspace::{AffineSubspace, SubspacePredictor};
pub use tracker::{BoundingBox, Frame, Tracker};

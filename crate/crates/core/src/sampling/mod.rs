//! Exit-radius law, shared random tuples, and the walk-outside-spheres
//! point estimator.

mod rng;
mod special;
mod wos;

pub use rng::{sample_beta, Purpose, RandomSequence, StepDraw, StreamKey, Uniforms};
pub use special::{integrate, make_params, reg_inc_beta, IncompleteBeta, StableParams, A2_TOLERANCE};
pub use wos::{
    f_term, path_value, point_estimate, run_path, wos_step, PointEstimate, WosPath,
    DEFAULT_MAX_STEPS,
};

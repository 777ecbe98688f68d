//! Dense matrices, deterministic random streams, special functions and the
//! descriptive/inferential statistics used across the crate.

mod matrix;
mod rng;
pub mod special;
mod stats;

pub use matrix::Matrix;
pub use rng::RngState;
pub use special::{betainc_regularized, digamma, lgamma, sigmoid, softplus, softplus_inv, trigamma};
pub use stats::{
    paired_t_test, student_t_test, student_t_two_sided_p, weighted_cv_coefficient, SampleStats,
    TTest,
};
pub(crate) use stats::CV_VARIANCE_FLOOR;

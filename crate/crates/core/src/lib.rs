//! Sparse factor analysis of graded learner responses.
//!
//! A binary response `Y_{i,j}` of learner `j` to question `i` is modelled as
//! `Y ~ Ber(Φ(Z))` with `Z = W C + μ 1ᵀ`, where `W ≥ 0` is a sparse
//! question–concept association matrix, `C` holds learner concept knowledge and
//! `μ` the intrinsic question difficulties.
//!
//! * [`sparfa_m`]: maximum-likelihood estimation by alternating FISTA.
//! * [`sparfa_b`]: Gibbs sampling under a spike-slab exponential prior.
//! * [`ksvd`]: a non-negative K-SVD baseline that ignores the link.
//! * [`tags`]: mapping concepts to instructor tags.
//! * [`synth`]: synthetic benchmarks, error metrics and held-out prediction.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod ksvd;
pub mod linalg;
pub mod link;
pub mod model;
pub mod nnls;
pub mod sparfa_b;
pub mod sparfa_m;
pub mod synth;
pub mod tags;

pub use error::{Result, SparfaError};
pub use link::LinkKind;
pub use model::{Dimensions, FactorModel, ResponseMatrix};

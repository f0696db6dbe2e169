//! Constructive softmax-attention approximators.
//!
//! Every module builds attention weight matrices from closed-form recipes
//! (no training) and pairs each construction with a verifier that grades it
//! against an independent oracle:
//!
//! - [`numkit`]: dense matrices, tempered softmax, norms, seeded Monte-Carlo
//!   function-error estimation.
//! - [`interp`]: truncation operator, uniform anchor grids, nearest-anchor
//!   selection and the score-form/argmin equivalence.
//! - [`hardmax`]: temperature budgets under which softmax acts as a
//!   near-argmax selector, and deviation checkers.
//! - [`construct_single`] / [`construct_multi`]: single-head and multi-head
//!   approximators of per-token truncated linear models.
//! - [`grid_uap`]: bump-function grids, the reference ReLU network, and the
//!   sequence-to-scalar / sequence-to-sequence universal approximators.
//! - [`native_seq2seq`]: attention as an exact column-wise linear map and the
//!   three-layer sequence-to-sequence assembly built on it.
//! - [`icl`]: in-context truncated linear models and the one-step in-context
//!   gradient-descent layer.

pub mod attn;
pub mod construct_multi;
pub mod construct_single;
pub mod error;
pub mod grid_uap;
pub mod hardmax;
pub mod icl;
pub mod interp;
pub mod native_seq2seq;
pub mod numkit;

pub use attn::{AffineMap, AttentionHead, AttentionStack};
pub use construct_single::ErrorReport;
pub use error::{Error, Result};
pub use interp::{IndexMapG, InterpolationGrid, TruncatedLinearModel};
pub use numkit::Matrix;

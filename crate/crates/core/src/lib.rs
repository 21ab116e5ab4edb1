//! Joint inference of correct answers, question difficulties and
//! discriminations, and participant abilities from sparse multiple-choice
//! responses, plus adaptive question selection by expected entropy reduction.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod baselines;
pub mod ep;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod oracle;
pub mod prob;
pub mod synth;

pub use ep::{infer, predictive_response, EpConfig, InferenceReport};
pub use error::{DareError, Result};
pub use model::{
    build_graph, validate, DareGraph, DiscriminationMode, GoldSet, ModelVariant, Posteriors, PriorSpec,
    QuestionSpec, ResponseDataset, ResponseRecord,
};
pub use prob::{Discrete, GammaDist, Gaussian1D};

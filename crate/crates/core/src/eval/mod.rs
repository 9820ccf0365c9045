//! Objective evaluation and analytic-oracle validation.

mod dtw;
mod mcd;
mod mixture;
pub mod synthetic;

pub use dtw::{dtw_align, euclidean, DtwAlignment};
pub use mcd::{cepstral_distance, evaluate_pairs, mcd, summarize, utterance_mcd, EvalReport, McdSummary, MCD_SCALE};
pub use mixture::GaussianMixture;
pub use synthetic::{synthetic_validation, SyntheticSpec, ValidationReport, ValidationSuite};

//! Diagnostics: unfolded connection matrices, depth-wise similarity of
//! layer inputs, and cost accounting.

pub mod cost;
pub mod similarity;
pub mod unfold;

pub use cost::{
    cost_report, count_params, estimate_activation_memory, estimate_flops, olmo_1b, CostReport, FlopCount,
    MemoryEstimate, ParamCount,
};
pub use similarity::{cosine, cosine_profile, SimilarityProfile, SimilarityRow};
pub use unfold::{dhc_effective_weights, matrix_csv, site_weights, unfold, unfold_by_tags, UnfoldedConnections};

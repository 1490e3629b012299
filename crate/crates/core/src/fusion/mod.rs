//! Late fusion of graph and text class probabilities.

mod meta;
mod pipeline;
mod table;

pub use meta::{fit_meta_learner, MetaConfig, MetaLearner};
pub use pipeline::{
    fusion_fixture, mean_std, run_stage, split_media, FixtureConfig, FuseSplit, FusionFixture, StageInputs, StageReport,
    DEFAULT_TEST_FRACTION,
};
pub use table::{
    fuse_text_graph, impute_missing, load_probabilities, save_probabilities, Fallback, Imputed, ProbabilityTable,
    Provenance, SUM_TOLERANCE,
};

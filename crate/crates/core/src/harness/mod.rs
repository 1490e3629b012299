//! Run configuration, seeded experiment runs and the command bodies behind
//! the `mgm` binary.

mod commands;
mod config;
mod data;
mod runs;

pub use commands::{
    cmd_eval, cmd_fuse, cmd_label_fraction, cmd_memory_fraction, cmd_predict, cmd_sweep, cmd_synth, cmd_train,
    write_csv, write_json, EvalSummary, FractionRow, FuseSummary, PredictOptions, PredictSummary, SweepSummaryRow,
    TrainSummary,
};
pub use config::{parse_seeds, FuseConfig, GraphFiles, Overrides, RunConfig};
pub use data::{load_dataset, predictions_tsv, read_label_map, read_predictions, Dataset};
pub use runs::{
    eta_grid, memory_fraction_seed, paired_run, prepare, sweep_seed, Aggregate, MassRow, MeanStd, PairedRun, Prepared,
    RunTiming, SweepRow,
};

//! Experiment orchestration, persistence and plotting.

mod config;
mod formats;
pub mod plots;
mod record;
mod runners;

pub use config::{ExperimentKind, ExperimentSpec, TransitionConfig};
pub use formats::{
    load_activations, load_checkpoint, load_dictionary, save_activations, save_checkpoint,
    save_dictionary, Checkpoint,
};
pub use plots::emit_plots;
pub use record::RunRecord;
pub use runners::{
    evaluate, pinned_fraction, run_autol0, run_recon_compare, run_single, run_single_on, run_sweep,
    run_transition, write_cosine_csv, write_evaluation, write_projection_csv, write_scalars,
    AutoL0Run, Direction, EvalOutputs, Evaluation, ReconRow, SweepCell, SweepSummary,
    TransitionRun, World,
};

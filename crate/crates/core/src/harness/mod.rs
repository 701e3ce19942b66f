//! Experiments: gradient checks, gate ablation, stability probes and timing.

mod ablation;
mod gradcheck;
mod probe;
mod timing;

pub use ablation::{
    mean_std, pair_removal_rows, run_ablation, table_rows, AblationPlan, AblationReport, AblationResult, AblationRow,
    SeedOutcome, ALL_GATES,
};
pub use gradcheck::{gradcheck, preflight, GradcheckReport, GradcheckSpec, FD_STEP, GRADCHECK_TOL};
pub use probe::{stability_probe, write_probe_csv, ProbeConfig, ProbeResult};
pub use timing::{timing_sweep, write_timing_csv, TimingRow, TABLE_LENGTHS};

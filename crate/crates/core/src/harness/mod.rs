//! Config-driven experiment runner.

mod config;
mod tasks;

pub use config::{
    parse_config, parse_config_str, print_config, ExperimentConfig, ProblemSpec, RunSpec, StepSize, Task,
    DEFAULTS_HELP,
};
pub use tasks::{
    aggregate, build_problem, certified_problem, coupling_curve, figure1_curves, plateau, run_complexity,
    run_coupling, run_figure1, run_predict, run_speedup, run_stationary, run_task, speedup_rows, AggregateRow,
    CouplingCurve, CurveRow, SpeedupRow,
};

pub mod ops;
pub mod plot;
pub mod scenario;

pub use ops::{run_op, Context, OpError, StepOutcome, OPERATIONS};
pub use plot::emit_plot_data;
pub use scenario::{run, run_scenario, Check, DomainSpec, HarnessError, Report, RunOptions, Scenario, Status};

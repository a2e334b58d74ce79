//! The phase loop: schedules, memory budgets, orchestration and metrics.

mod config;
mod results;
mod runner;
mod schedule;
mod seeds;

pub use config::{DataConfig, ExperimentConfig, ModelConfig, ScheduleConfig, Strategy};
pub use results::{average_accuracy, forgetting_rate, PhaseRecord, PhaseResults, RunSummary};
pub use runner::{accuracy, initial_exemplars, prepare_stream, run_mcil, train_phase_model, RunOutput};
pub use schedule::{build_schedule, enforce_memory_budget, MemoryBudget, PhaseSchedule};
pub use seeds::{derive_seed, Purpose};

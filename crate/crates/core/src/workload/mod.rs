//! Tree generation, trace synthesis and replay, and reporting.

mod bench;
mod gen;
mod replay;
mod report;
mod stress;
mod synth;
mod trace;

use thiserror::Error;

pub use bench::{bench_depth, BenchCell, BenchConfig, BenchGrid};
pub use gen::{gen_tree, TreeSpec};
pub use replay::{replay, EventOutcome, EventResult, ReplayConfig, ReplayOutcome, Replayer, TickMode};
pub use report::{parse_csv, render_table, to_csv, Run};
pub use stress::{run_stress, StressConfig, StressReport};
pub use synth::{synth_trace, Model, SynthParams};
pub use trace::{read_trace, write_trace, Event, Op, TraceEvent};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid tree spec: {0}")]
    SpecInvalid(String),
    #[error("malformed trace at line {line}: {reason}")]
    TraceMalformed { line: usize, reason: String },
    #[error("malformed metrics CSV: {0}")]
    CsvMalformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

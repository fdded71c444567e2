//! Synthetic sources, R-D sweeps and BD-rate comparison.

pub mod bdrate;
pub mod rd;
pub mod report;
pub mod synth;

pub use bdrate::{bd_rate, RdCurve, RdPoint};
pub use rd::{run_point, sweep, Method, PointResult, SweepConfig, SweepResult};
pub use report::{analysis_report, AnalysisBlock};
pub use synth::{synth_source, SyntheticSpec};

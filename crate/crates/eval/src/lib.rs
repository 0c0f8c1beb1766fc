//! LBS baseline, error metrics, evaluation reports and the `uvcloth`
//! command line.

pub mod cli;
pub mod error;
pub mod evaluate;
pub mod lbs;
pub mod metrics;
pub mod report;

pub use error::{EvalError, Result};
pub use evaluate::{run_eval, Evaluator};
pub use lbs::lbs_predict;
pub use metrics::{mse_uv, mse_vertices};
pub use report::{EvalReport, EvalRow, Method};

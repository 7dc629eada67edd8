//! Independent causal learning for cooperative multi-agent gridworlds.
//!
//! - [`environments`]: Predator-Prey and Lumberjacks on a shared grid core.
//! - [`oracle`]: ground-truth per-agent causality factors.
//! - [`learners`]: tabular ICL / IDQL / joint-action Q-learning and evaluation.
//! - [`discovery`]: Granger-style `o_i -> r` edge inference from traces.

pub mod discovery;
pub mod environments;
pub mod learners;
pub mod oracle;

pub use discovery::{CausalMatrix, DiscoveryReport, GrangerConfig, PredictedCredit, SeriesPanel};
pub use environments::{Action, EnvConfig, GridWorld, Observation, StateKey, Task};
pub use learners::{CreditSource, EvalReport, LearnerConfig, QTable, TracePlan};
pub use oracle::CausalVector;

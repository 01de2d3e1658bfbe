//! Planning-enhanced multi-action dialog policy: domain types, Gumbel
//! sampling, the planner model, training, baselines, a toy task-oriented
//! world with a user simulator, and evaluation.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod optim;
pub mod sampling;
pub mod training;
pub mod user_sim;

pub use error::{PedpError, Result};

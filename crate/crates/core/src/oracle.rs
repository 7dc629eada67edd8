//! Ground-truth causality factors for the two gridworld tasks.
//!
//! At a rewarded step, agent `i` gets `c_i = 1` only when its observation
//! from the step before made it a plausible contributor:
//! - Predator-Prey: at least one prey was in its mask.
//! - Lumberjacks: a tree was in its mask, and the agents it saw (itself
//!   included) numbered at least the lowest visible tree level.
//!
//! Steps without reward get all ones; `c_i * 0 = 0` so the mask is moot there.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environments::{JointStepResult, Observation, Task};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("expected {expected} observations, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Binary per-agent causality factors for one timestep.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CausalVector {
    pub timestep: usize,
    pub values: Vec<u8>,
}

impl CausalVector {
    pub fn ones(n_agents: usize, timestep: usize) -> Self {
        CausalVector {
            timestep,
            values: vec![1; n_agents],
        }
    }

    pub fn from_flags(flags: impl IntoIterator<Item = bool>, timestep: usize) -> Self {
        CausalVector {
            timestep,
            values: flags.into_iter().map(u8::from).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, agent: usize) -> u8 {
        self.values[agent]
    }

    pub fn all_ones(&self) -> bool {
        self.values.iter().all(|v| *v == 1)
    }
}

fn check_len(prev_obs: &[Observation], n_agents: usize) -> Result<(), OracleError> {
    if prev_obs.len() != n_agents {
        return Err(OracleError::LengthMismatch {
            expected: n_agents,
            got: prev_obs.len(),
        });
    }
    Ok(())
}

fn oracle_with(
    prev_obs: &[Observation],
    result: &JointStepResult,
    timestep: usize,
    rule: impl Fn(&Observation) -> bool,
) -> Result<CausalVector, OracleError> {
    check_len(prev_obs, result.observations.len())?;
    if result.team_reward <= 0.0 {
        return Ok(CausalVector::ones(prev_obs.len(), timestep));
    }
    Ok(CausalVector::from_flags(prev_obs.iter().map(rule), timestep))
}

pub fn predator_prey_rule(obs: &Observation) -> bool {
    obs.sees_prey()
}

pub fn lumberjacks_rule(obs: &Observation) -> bool {
    match obs.tree_levels().min() {
        Some(level) => obs.agent_count() >= level as usize,
        None => false,
    }
}

pub fn oracle_predator_prey(
    prev_obs: &[Observation],
    result: &JointStepResult,
    timestep: usize,
) -> Result<CausalVector, OracleError> {
    oracle_with(prev_obs, result, timestep, predator_prey_rule)
}

pub fn oracle_lumberjacks(
    prev_obs: &[Observation],
    result: &JointStepResult,
    timestep: usize,
) -> Result<CausalVector, OracleError> {
    oracle_with(prev_obs, result, timestep, lumberjacks_rule)
}

pub fn oracle(
    task: Task,
    prev_obs: &[Observation],
    result: &JointStepResult,
    timestep: usize,
) -> Result<CausalVector, OracleError> {
    match task {
        Task::PredatorPrey => oracle_predator_prey(prev_obs, result, timestep),
        Task::Lumberjacks => oracle_lumberjacks(prev_obs, result, timestep),
    }
}

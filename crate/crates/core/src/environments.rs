//! Cooperative gridworld tasks with local observation masks.
//!
//! Two tasks share one simulator core:
//! - Predator-Prey: agents capture moving preys; a prey is captured once two
//!   or more agents stand in its Moore neighborhood.
//! - Lumberjacks: agents chop static trees; a tree of level `l` falls once
//!   `l` or more agents stand in its Moore neighborhood.
//!
//! Every capture/chop pays the team `+1.0`. A step resolves in a fixed order:
//! agents move simultaneously, captures/chops are resolved against the new
//! agent positions, then surviving preys take one uniform random legal move.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("step called on a finished episode")]
    SteppedAfterDone,
    #[error("expected {expected} actions, got {got}")]
    ActionCountMismatch { expected: usize, got: usize },
    #[error("agent id {0} out of range")]
    UnknownAgent(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PredatorPrey,
    Lumberjacks,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::PredatorPrey => "predator_prey",
            Task::Lumberjacks => "lumberjacks",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Static description of an environment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub task: Task,
    pub height: usize,
    pub width: usize,
    pub agents: usize,
    /// Number of preys (Predator-Prey) or trees (Lumberjacks).
    pub targets: usize,
    /// Tree levels are drawn uniformly from `1..=max_tree_level`. Ignored by
    /// Predator-Prey.
    #[serde(default = "default_max_tree_level")]
    pub max_tree_level: u8,
    #[serde(default = "default_mask_radius")]
    pub mask_radius: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_tree_level() -> u8 {
    2
}

fn default_mask_radius() -> usize {
    2
}

fn default_max_steps() -> usize {
    100
}

impl EnvConfig {
    /// 7x7 grid, 4 predators, 2 preys, 5x5 views.
    pub fn predator_prey() -> Self {
        EnvConfig {
            task: Task::PredatorPrey,
            height: 7,
            width: 7,
            agents: 4,
            targets: 2,
            max_tree_level: default_max_tree_level(),
            mask_radius: default_mask_radius(),
            max_steps: default_max_steps(),
        }
    }

    /// 8x8 grid, 4 lumberjacks, 6 trees of level 1 or 2, 5x5 views.
    pub fn lumberjacks() -> Self {
        EnvConfig {
            task: Task::Lumberjacks,
            height: 8,
            width: 8,
            agents: 4,
            targets: 6,
            max_tree_level: default_max_tree_level(),
            mask_radius: default_mask_radius(),
            max_steps: default_max_steps(),
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::PredatorPrey => Self::predator_prey(),
            Task::Lumberjacks => Self::lumberjacks(),
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Side length of the square observation mask.
    pub fn mask_side(&self) -> usize {
        2 * self.mask_radius + 1
    }

    pub fn mask_len(&self) -> usize {
        self.mask_side() * self.mask_side()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if self.height < 3 || self.width < 3 {
            return bad(format!("grid {}x{} is smaller than 3x3", self.height, self.width));
        }
        if self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return bad("grid dimension exceeds 65535".into());
        }
        if self.agents == 0 {
            return bad("at least one agent is required".into());
        }
        if self.targets == 0 {
            return bad("at least one prey/tree is required".into());
        }
        if self.agents + self.targets > self.cells() {
            return bad(format!(
                "{} agents and {} targets cannot occupy {} distinct cells",
                self.agents,
                self.targets,
                self.cells()
            ));
        }
        if self.mask_radius >= self.height || self.mask_radius >= self.width {
            return bad(format!(
                "mask radius {} must be smaller than the grid dimensions",
                self.mask_radius
            ));
        }
        if self.task == Task::Lumberjacks && (self.max_tree_level == 0 || self.max_tree_level as usize > self.agents) {
            return bad(format!(
                "max tree level {} must lie in 1..={}",
                self.max_tree_level, self.agents
            ));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

impl GridPos {
    pub fn new(row: usize, col: usize) -> Self {
        GridPos { row, col }
    }

    pub fn chebyshev(&self, other: &GridPos) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }

    pub fn manhattan(&self, other: &GridPos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// True when `other` is one of the 8 cells around `self`.
    pub fn is_moore_neighbor(&self, other: &GridPos) -> bool {
        self.chebyshev(other) == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }

    fn offset(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay => (0, 0),
        }
    }
}

/// What an agent sees in one mask cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellContent {
    OutOfBounds,
    Empty,
    Agent,
    Prey,
    Tree(u8),
}

impl CellContent {
    /// Stable small-integer code: 0 out of bounds, 1 empty, 2 agent, 3 prey,
    /// `3 + level` for a tree.
    pub fn code(self) -> u8 {
        match self {
            CellContent::OutOfBounds => 0,
            CellContent::Empty => 1,
            CellContent::Agent => 2,
            CellContent::Prey => 3,
            CellContent::Tree(level) => 3 + level,
        }
    }

    pub fn from_code(code: u8) -> Option<CellContent> {
        Some(match code {
            0 => CellContent::OutOfBounds,
            1 => CellContent::Empty,
            2 => CellContent::Agent,
            3 => CellContent::Prey,
            c => CellContent::Tree(c - 3),
        })
    }
}

/// An agent's local view: its own position plus the row-major
/// `(2k+1) x (2k+1)` neighborhood centred on it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    pub center: GridPos,
    pub radius: usize,
    pub mask: Vec<CellContent>,
}

impl Observation {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Mask cell at offset `(dr, dc)` from the center.
    pub fn at(&self, dr: isize, dc: isize) -> CellContent {
        let k = self.radius as isize;
        let side = self.side() as isize;
        self.mask[((dr + k) * side + (dc + k)) as usize]
    }

    pub fn sees_prey(&self) -> bool {
        self.mask.contains(&CellContent::Prey)
    }

    /// Levels of every visible tree.
    pub fn tree_levels(&self) -> impl Iterator<Item = u8> + '_ {
        self.mask.iter().filter_map(|c| match c {
            CellContent::Tree(level) => Some(*level),
            _ => None,
        })
    }

    /// Agents in the mask, the observer included.
    pub fn agent_count(&self) -> usize {
        self.mask.iter().filter(|c| **c == CellContent::Agent).count()
    }

    pub fn sees_target(&self) -> bool {
        self.mask
            .iter()
            .any(|c| matches!(c, CellContent::Prey | CellContent::Tree(_)))
    }
}

/// Opaque, injective encoding of an observation used to index Q-tables.
///
/// Layout: `row` and `col` as little-endian `u16`, then one [`CellContent::code`]
/// byte per mask cell. Joint keys are concatenations of per-agent keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(Box<[u8]>);

impl StateKey {
    pub fn from_bytes(bytes: impl Into<Box<[u8]>>) -> Self {
        StateKey(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn concat<'a>(keys: impl IntoIterator<Item = &'a StateKey>) -> StateKey {
        let mut bytes = Vec::new();
        for key in keys {
            bytes.extend_from_slice(&key.0);
        }
        StateKey(bytes.into())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(hex: &str) -> Option<StateKey> {
        if !hex.len().is_multiple_of(2) {
            return None;
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(hex.get(i..i + 2)?, 16).ok())
            .collect::<Option<Vec<u8>>>()?;
        Some(StateKey(bytes.into()))
    }
}

pub fn state_key(obs: &Observation) -> StateKey {
    let mut bytes = Vec::with_capacity(4 + obs.mask.len());
    bytes.extend_from_slice(&(obs.center.row as u16).to_le_bytes());
    bytes.extend_from_slice(&(obs.center.col as u16).to_le_bytes());
    bytes.extend(obs.mask.iter().map(|c| c.code()));
    StateKey(bytes.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Capture,
    Chop,
}

/// A capture or chop, with every agent standing in the target's neighborhood.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvent {
    pub kind: EventKind,
    pub pos: GridPos,
    /// Tree level for chops, `None` for captures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
    pub agents: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointStepResult {
    pub observations: Vec<Observation>,
    pub team_reward: f64,
    pub events: Vec<StepEvent>,
    pub done: bool,
    /// Every prey/tree is gone. Distinguishes true termination from hitting
    /// the step limit.
    pub cleared: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tree {
    pub pos: GridPos,
    pub level: u8,
}

/// Full simulator state for one episode.
#[derive(Debug, Clone)]
pub struct GridWorld {
    config: EnvConfig,
    agents: Vec<GridPos>,
    preys: Vec<GridPos>,
    trees: Vec<Tree>,
    step: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl GridWorld {
    /// Places all entities on distinct uniformly sampled cells.
    pub fn reset(config: &EnvConfig, seed: u64) -> Result<(GridWorld, Vec<Observation>), EnvError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = sample(&mut rng, config.cells(), config.agents + config.targets);
        let to_pos = |i: usize| GridPos::new(i / config.width, i % config.width);
        let agents: Vec<GridPos> = cells.iter().take(config.agents).map(to_pos).collect();
        let target_cells: Vec<GridPos> = cells.iter().skip(config.agents).map(to_pos).collect();
        let (preys, trees) = match config.task {
            Task::PredatorPrey => (target_cells, Vec::new()),
            Task::Lumberjacks => {
                let trees = target_cells
                    .into_iter()
                    .map(|pos| Tree {
                        pos,
                        level: rng.random_range(1..=config.max_tree_level),
                    })
                    .collect();
                (Vec::new(), trees)
            }
        };
        let world = GridWorld {
            config: config.clone(),
            agents,
            preys,
            trees,
            step: 0,
            done: false,
            rng,
        };
        let obs = world.observations();
        Ok((world, obs))
    }

    /// Builds a world from an explicit layout. `targets` are preys or trees
    /// depending on the task; `levels` is only read for Lumberjacks.
    pub fn from_layout(
        config: &EnvConfig,
        agents: Vec<GridPos>,
        targets: Vec<GridPos>,
        levels: &[u8],
        seed: u64,
    ) -> Result<GridWorld, EnvError> {
        let mut config = config.clone();
        config.agents = agents.len();
        config.targets = targets.len();
        config.validate()?;
        let mut seen = std::collections::HashSet::new();
        for pos in agents.iter().chain(targets.iter()) {
            if pos.row >= config.height || pos.col >= config.width {
                return Err(EnvError::InvalidConfig(format!("{pos:?} is out of bounds")));
            }
            if !seen.insert(*pos) {
                return Err(EnvError::InvalidConfig(format!("{pos:?} is occupied twice")));
            }
        }
        let (preys, trees) = match config.task {
            Task::PredatorPrey => (targets, Vec::new()),
            Task::Lumberjacks => {
                if levels.len() != targets.len() {
                    return Err(EnvError::InvalidConfig("one level per tree is required".into()));
                }
                if let Some(level) = levels.iter().find(|l| **l == 0 || **l as usize > config.agents) {
                    return Err(EnvError::InvalidConfig(format!("tree level {level} out of range")));
                }
                let trees = targets
                    .into_iter()
                    .zip(levels)
                    .map(|(pos, level)| Tree { pos, level: *level })
                    .collect();
                (Vec::new(), trees)
            }
        };
        Ok(GridWorld {
            config,
            agents,
            preys,
            trees,
            step: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn agents(&self) -> &[GridPos] {
        &self.agents
    }

    pub fn preys(&self) -> &[GridPos] {
        &self.preys
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn targets_remaining(&self) -> usize {
        self.preys.len() + self.trees.len()
    }

    fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.config.height && (col as usize) < self.config.width
    }

    fn content(&self, pos: GridPos) -> CellContent {
        if self.agents.contains(&pos) {
            CellContent::Agent
        } else if self.preys.contains(&pos) {
            CellContent::Prey
        } else if let Some(tree) = self.trees.iter().find(|t| t.pos == pos) {
            CellContent::Tree(tree.level)
        } else {
            CellContent::Empty
        }
    }

    fn shifted(&self, pos: GridPos, action: Action) -> Option<GridPos> {
        let (dr, dc) = action.offset();
        let row = pos.row as isize + dr;
        let col = pos.col as isize + dc;
        self.in_bounds(row, col)
            .then(|| GridPos::new(row as usize, col as usize))
    }

    pub fn observe(&self, agent: usize) -> Result<Observation, EnvError> {
        let center = *self.agents.get(agent).ok_or(EnvError::UnknownAgent(agent))?;
        Ok(self.observe_at(center))
    }

    fn observe_at(&self, center: GridPos) -> Observation {
        let k = self.config.mask_radius as isize;
        let mut mask = Vec::with_capacity(self.config.mask_len());
        for dr in -k..=k {
            for dc in -k..=k {
                let row = center.row as isize + dr;
                let col = center.col as isize + dc;
                if self.in_bounds(row, col) {
                    mask.push(self.content(GridPos::new(row as usize, col as usize)));
                } else {
                    mask.push(CellContent::OutOfBounds);
                }
            }
        }
        Observation {
            center,
            radius: self.config.mask_radius,
            mask,
        }
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.agents.iter().map(|p| self.observe_at(*p)).collect()
    }

    /// Advances the world by one joint action.
    pub fn step(&mut self, actions: &[Action]) -> Result<JointStepResult, EnvError> {
        if self.done {
            return Err(EnvError::SteppedAfterDone);
        }
        if actions.len() != self.agents.len() {
            return Err(EnvError::ActionCountMismatch {
                expected: self.agents.len(),
                got: actions.len(),
            });
        }

        self.move_agents(actions);
        let events = self.resolve_events();
        self.move_preys();

        self.step += 1;
        let cleared = self.targets_remaining() == 0;
        self.done = cleared || self.step >= self.config.max_steps;
        Ok(JointStepResult {
            observations: self.observations(),
            team_reward: events.len() as f64,
            events,
            done: self.done,
            cleared,
        })
    }

    // Simultaneous moves. A move is replaced by Stay when it leaves the grid,
    // enters a prey/tree cell, enters a cell currently held by another agent,
    // or targets the same cell as a lower-indexed agent.
    fn move_agents(&mut self, actions: &[Action]) {
        let mut next: Vec<GridPos> = Vec::with_capacity(self.agents.len());
        for (i, (&pos, &action)) in self.agents.iter().zip(actions).enumerate() {
            let target = match self.shifted(pos, action) {
                Some(t) if t != pos => t,
                _ => {
                    next.push(pos);
                    continue;
                }
            };
            let blocked = self.preys.contains(&target)
                || self.trees.iter().any(|t| t.pos == target)
                || self.agents.iter().enumerate().any(|(j, p)| j != i && *p == target)
                || next.contains(&target);
            next.push(if blocked { pos } else { target });
        }
        self.agents = next;
    }

    fn participants(&self, pos: GridPos) -> Vec<usize> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_moore_neighbor(&pos))
            .map(|(i, _)| i)
            .collect()
    }

    fn resolve_events(&mut self) -> Vec<StepEvent> {
        let mut events = Vec::new();
        let mut kept_preys = Vec::with_capacity(self.preys.len());
        for &prey in &self.preys {
            let agents = self.participants(prey);
            if agents.len() >= 2 {
                events.push(StepEvent {
                    kind: EventKind::Capture,
                    pos: prey,
                    level: None,
                    agents,
                });
            } else {
                kept_preys.push(prey);
            }
        }
        let mut kept_trees = Vec::with_capacity(self.trees.len());
        for &tree in &self.trees {
            let agents = self.participants(tree.pos);
            if agents.len() >= tree.level as usize {
                events.push(StepEvent {
                    kind: EventKind::Chop,
                    pos: tree.pos,
                    level: Some(tree.level),
                    agents,
                });
            } else {
                kept_trees.push(tree);
            }
        }
        self.preys = kept_preys;
        self.trees = kept_trees;
        events
    }

    // Preys move one at a time in index order; Stay is always legal.
    fn move_preys(&mut self) {
        for i in 0..self.preys.len() {
            let pos = self.preys[i];
            let legal: Vec<GridPos> = Action::ALL
                .iter()
                .filter_map(|a| self.shifted(pos, *a))
                .filter(|t| *t == pos || self.content(*t) == CellContent::Empty)
                .collect();
            let pick = self.rng.random_range(0..legal.len());
            self.preys[i] = legal[pick];
        }
    }

    /// Sum over agents of the Manhattan distances to every other agent.
    pub fn pairwise_distance_sum(&self) -> usize {
        pairwise_distance_sum(&self.agents)
    }
}

pub fn pairwise_distance_sum(agents: &[GridPos]) -> usize {
    agents
        .iter()
        .map(|a| agents.iter().map(|b| a.manhattan(b)).sum::<usize>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn pp(height: usize, width: usize) -> EnvConfig {
        EnvConfig {
            height,
            width,
            ..EnvConfig::predator_prey()
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = EnvConfig::predator_prey();
        let (a, obs_a) = GridWorld::reset(&cfg, 7).unwrap();
        let (b, obs_b) = GridWorld::reset(&cfg, 7).unwrap();
        assert_eq!(a.agents(), b.agents());
        assert_eq!(a.preys(), b.preys());
        assert_eq!(obs_a, obs_b);
    }

    #[test]
    fn lumberjacks_reset_occupies_distinct_cells() {
        let (world, _) = GridWorld::reset(&EnvConfig::lumberjacks(), 11).unwrap();
        let cells: HashSet<GridPos> = world
            .agents()
            .iter()
            .copied()
            .chain(world.trees().iter().map(|t| t.pos))
            .collect();
        assert_eq!(cells.len(), 10);
        assert!(world.trees().iter().all(|t| (1..=2).contains(&t.level)));
    }

    #[test]
    fn overcrowded_grid_is_rejected() {
        let cfg = EnvConfig {
            height: 2,
            width: 2,
            ..EnvConfig::predator_prey()
        };
        assert!(matches!(GridWorld::reset(&cfg, 0), Err(EnvError::InvalidConfig(_))));
        let cfg = EnvConfig {
            agents: 40,
            targets: 10,
            ..EnvConfig::predator_prey()
        };
        assert!(matches!(GridWorld::reset(&cfg, 0), Err(EnvError::InvalidConfig(_))));
    }

    #[test]
    fn mask_radius_must_fit_grid() {
        let cfg = EnvConfig {
            mask_radius: 7,
            ..EnvConfig::predator_prey()
        };
        assert!(matches!(cfg.validate(), Err(EnvError::InvalidConfig(_))));
    }

    #[test]
    fn two_adjacent_predators_capture() {
        let cfg = pp(7, 7);
        let mut world = GridWorld::from_layout(
            &cfg,
            vec![
                GridPos::new(2, 2),
                GridPos::new(2, 4),
                GridPos::new(6, 0),
                GridPos::new(6, 6),
            ],
            vec![GridPos::new(3, 3)],
            &[],
            1,
        )
        .unwrap();
        let result = world.step(&[Action::Stay; 4]).unwrap();
        assert_eq!(result.team_reward, 1.0);
        assert_eq!(result.events.len(), 1);
        assert_eq!(result.events[0].kind, EventKind::Capture);
        assert_eq!(result.events[0].agents, vec![0, 1]);
        assert!(result.done && result.cleared);
    }

    #[test]
    fn single_predator_does_not_capture() {
        let cfg = pp(7, 7);
        let mut world = GridWorld::from_layout(
            &cfg,
            vec![
                GridPos::new(2, 2),
                GridPos::new(0, 6),
                GridPos::new(6, 0),
                GridPos::new(6, 6),
            ],
            vec![GridPos::new(3, 3)],
            &[],
            1,
        )
        .unwrap();
        let result = world.step(&[Action::Stay; 4]).unwrap();
        assert_eq!(result.team_reward, 0.0);
        assert!(result.events.is_empty());
        assert!(!result.done);
    }

    #[test]
    fn level_one_tree_falls_to_one_agent() {
        let cfg = EnvConfig::lumberjacks();
        let mut world = GridWorld::from_layout(
            &cfg,
            vec![GridPos::new(0, 0), GridPos::new(7, 7)],
            vec![GridPos::new(1, 1), GridPos::new(5, 5)],
            &[1, 2],
            0,
        )
        .unwrap();
        let result = world.step(&[Action::Stay; 2]).unwrap();
        assert_eq!(result.team_reward, 1.0);
        assert_eq!(result.events[0].kind, EventKind::Chop);
        assert_eq!(result.events[0].level, Some(1));
        assert_eq!(result.events[0].agents, vec![0]);
        assert_eq!(world.trees().len(), 1);
    }

    #[test]
    fn level_two_tree_needs_two_agents() {
        let cfg = EnvConfig::lumberjacks();
        let mut world = GridWorld::from_layout(
            &cfg,
            vec![GridPos::new(0, 0), GridPos::new(0, 3)],
            vec![GridPos::new(1, 1)],
            &[2],
            0,
        )
        .unwrap();
        let result = world.step(&[Action::Stay, Action::Left]).unwrap();
        assert_eq!(result.team_reward, 1.0);
        assert_eq!(result.events[0].agents, vec![0, 1]);
    }

    #[test]
    fn stepping_after_done_fails() {
        let cfg = EnvConfig {
            max_steps: 1,
            ..pp(7, 7)
        };
        let (mut world, _) = GridWorld::reset(&cfg, 3).unwrap();
        let first = world.step(&[Action::Stay; 4]).unwrap();
        assert!(first.done);
        assert_eq!(world.step(&[Action::Stay; 4]), Err(EnvError::SteppedAfterDone));
    }

    #[test]
    fn collisions_resolve_to_stay() {
        let cfg = pp(5, 5);
        // agent 0 and 1 both want (2,2); agent 2 tries to walk into agent 3.
        let mut world = GridWorld::from_layout(
            &cfg,
            vec![
                GridPos::new(1, 2),
                GridPos::new(3, 2),
                GridPos::new(4, 0),
                GridPos::new(4, 1),
            ],
            vec![GridPos::new(0, 4)],
            &[],
            0,
        )
        .unwrap();
        world
            .step(&[Action::Down, Action::Up, Action::Right, Action::Right])
            .unwrap();
        assert_eq!(
            world.agents(),
            &[
                GridPos::new(2, 2),
                GridPos::new(3, 2),
                GridPos::new(4, 0),
                GridPos::new(4, 2)
            ]
        );
    }

    #[test]
    fn corner_observation_has_five_out_of_bounds_cells() {
        let cfg = EnvConfig {
            mask_radius: 1,
            ..pp(7, 7)
        };
        let world = GridWorld::from_layout(
            &cfg,
            vec![GridPos::new(0, 0), GridPos::new(6, 6)],
            vec![GridPos::new(3, 3)],
            &[],
            0,
        )
        .unwrap();
        let obs = world.observe(0).unwrap();
        let oob = obs.mask.iter().filter(|c| **c == CellContent::OutOfBounds).count();
        assert_eq!(oob, 5);
        assert_eq!(obs.at(0, 0), CellContent::Agent);
        assert!(matches!(world.observe(2), Err(EnvError::UnknownAgent(2))));
    }

    #[test]
    fn wide_corner_view_is_mostly_out_of_bounds() {
        let world = GridWorld::from_layout(
            &pp(7, 7),
            vec![GridPos::new(0, 0), GridPos::new(6, 6)],
            vec![GridPos::new(2, 2)],
            &[],
            0,
        )
        .unwrap();
        let obs = world.observe(0).unwrap();
        assert_eq!(obs.mask.len(), 25);
        let oob = obs.mask.iter().filter(|c| **c == CellContent::OutOfBounds).count();
        assert_eq!(oob, 16);
        assert_eq!(obs.at(2, 2), CellContent::Prey);
    }

    #[test]
    fn prey_above_agent_is_visible() {
        let cfg = pp(7, 7);
        let world = GridWorld::from_layout(
            &cfg,
            vec![GridPos::new(3, 3), GridPos::new(6, 6)],
            vec![GridPos::new(2, 3)],
            &[],
            0,
        )
        .unwrap();
        let obs = world.observe(0).unwrap();
        assert_eq!(obs.at(-1, 0), CellContent::Prey);
        assert!(obs.sees_prey());
    }

    #[test]
    fn lone_interior_agent_sees_empty_cells() {
        let cfg = EnvConfig {
            mask_radius: 1,
            ..pp(7, 7)
        };
        let world = GridWorld::from_layout(
            &cfg,
            vec![GridPos::new(3, 3), GridPos::new(6, 6)],
            vec![GridPos::new(0, 0)],
            &[],
            0,
        )
        .unwrap();
        let obs = world.observe(0).unwrap();
        for (i, cell) in obs.mask.iter().enumerate() {
            let expected = if i == 4 { CellContent::Agent } else { CellContent::Empty };
            assert_eq!(*cell, expected);
        }
    }

    #[test]
    fn state_key_golden_value() {
        let obs = Observation {
            center: GridPos::new(1, 2),
            radius: 1,
            mask: vec![
                CellContent::OutOfBounds,
                CellContent::Empty,
                CellContent::Prey,
                CellContent::Empty,
                CellContent::Agent,
                CellContent::Tree(2),
                CellContent::Empty,
                CellContent::Agent,
                CellContent::Tree(1),
            ],
        };
        assert_eq!(state_key(&obs).to_hex(), "01000200000103010205010204");
        let mut other = obs.clone();
        other.mask[1] = CellContent::Agent;
        assert_ne!(state_key(&obs), state_key(&other));
        assert_eq!(state_key(&obs), state_key(&obs.clone()));
        let key = state_key(&obs);
        assert_eq!(StateKey::from_hex(&key.to_hex()), Some(key));
    }

    #[test]
    fn cell_codes_round_trip() {
        for cell in [
            CellContent::OutOfBounds,
            CellContent::Empty,
            CellContent::Agent,
            CellContent::Prey,
            CellContent::Tree(1),
            CellContent::Tree(4),
        ] {
            assert_eq!(CellContent::from_code(cell.code()), Some(cell));
        }
    }

    #[test]
    fn frozen_corner_agents_distance() {
        let agents = [GridPos::new(0, 0), GridPos::new(6, 6)];
        assert_eq!(pairwise_distance_sum(&agents), 24);
    }
}

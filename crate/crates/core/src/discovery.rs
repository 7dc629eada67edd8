//! Observation -> reward causal discovery over recorded episodes.
//!
//! For each agent `i` we fit two ridge predictors of the next team reward from
//! lagged history: one over every agent's encoded observations plus the
//! reward's own lags, and one with agent `i`'s block removed. If dropping
//! `o_i` makes held-out error grow, the reward depends on the past of `o_i`
//! and the edge `o_i -> r` is kept. Lags never cross an episode boundary.
//!
//! Held-out error comes from K-fold cross validation over whole episodes.
//! Fold membership is a seeded hash of the episode contents that does not
//! depend on agent order, so duplicated episodes land in the same fold and
//! relabelling agents permutes the scores.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environments::{CellContent, JointStepResult, Observation};
use crate::learners::EpisodeTrace;
use crate::oracle::CausalVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscoveryError {
    #[error("inconsistent traces: {0}")]
    InconsistentTraces(String),
    #[error("reward series is constant; no causal signal to explain")]
    DegenerateTarget,
    #[error("no episode is longer than the lag {0}")]
    InsufficientData(usize),
    #[error("invalid discovery parameter: {0}")]
    InvalidParameter(String),
    #[error("no positive-reward steps to score")]
    NoPositiveRewardSteps,
    #[error("expected {expected} vectors, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// One-hot layout of an [`Observation`]: for every mask cell (row-major),
/// `4 + max_tree_level` channels indexed by [`CellContent::code`]:
/// out-of-bounds, empty, agent, prey, tree level 1, tree level 2, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEncoding {
    pub max_tree_level: u8,
}

impl Default for FeatureEncoding {
    fn default() -> Self {
        FeatureEncoding { max_tree_level: 2 }
    }
}

impl FeatureEncoding {
    pub fn categories(&self) -> usize {
        4 + self.max_tree_level as usize
    }

    pub fn dim(&self, mask_len: usize) -> usize {
        mask_len * self.categories()
    }

    pub fn encode_into(&self, obs: &Observation, out: &mut Vec<f64>) -> Result<(), DiscoveryError> {
        let cats = self.categories();
        let start = out.len();
        out.resize(start + obs.mask.len() * cats, 0.0);
        for (cell, content) in obs.mask.iter().enumerate() {
            if let CellContent::Tree(level) = content {
                if *level == 0 || *level > self.max_tree_level {
                    return Err(DiscoveryError::InconsistentTraces(format!(
                        "tree level {level} exceeds encoding maximum {}",
                        self.max_tree_level
                    )));
                }
            }
            out[start + cell * cats + content.code() as usize] = 1.0;
        }
        Ok(())
    }

    pub fn encode(&self, obs: &Observation) -> Result<Vec<f64>, DiscoveryError> {
        let mut out = Vec::with_capacity(self.dim(obs.mask.len()));
        self.encode_into(obs, &mut out)?;
        Ok(out)
    }
}

/// Aligned per-episode series. `features` is `len x agents x feature_dim`;
/// `rewards[t]` is the team reward collected on the transition out of step
/// `t`, so `features[t]` is its one-step lag.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelEpisode {
    pub features: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl PanelEpisode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel {
    agents: usize,
    feature_dim: usize,
    episodes: Vec<PanelEpisode>,
}

impl SeriesPanel {
    pub fn new(agents: usize, feature_dim: usize, episodes: Vec<PanelEpisode>) -> Result<Self, DiscoveryError> {
        if agents == 0 || feature_dim == 0 {
            return Err(DiscoveryError::InconsistentTraces(
                "empty agent or feature dimension".into(),
            ));
        }
        if episodes.is_empty() {
            return Err(DiscoveryError::InconsistentTraces("no episodes".into()));
        }
        for (i, ep) in episodes.iter().enumerate() {
            if ep.features.len() != ep.rewards.len() * agents * feature_dim {
                return Err(DiscoveryError::InconsistentTraces(format!(
                    "episode {i} has {} feature values for {} steps",
                    ep.features.len(),
                    ep.rewards.len()
                )));
            }
        }
        Ok(SeriesPanel {
            agents,
            feature_dim,
            episodes,
        })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn episodes(&self) -> &[PanelEpisode] {
        &self.episodes
    }

    fn features<'e>(&self, ep: &'e PanelEpisode, t: usize, agent: usize) -> &'e [f64] {
        let start = (t * self.agents + agent) * self.feature_dim;
        &ep.features[start..start + self.feature_dim]
    }

    /// Same panel with agents reordered: new agent `j` is old agent `order[j]`.
    pub fn permute_agents(&self, order: &[usize]) -> SeriesPanel {
        let episodes = self
            .episodes
            .iter()
            .map(|ep| {
                let mut features = Vec::with_capacity(ep.features.len());
                for t in 0..ep.len() {
                    for &old in order {
                        features.extend_from_slice(self.features(ep, t, old));
                    }
                }
                PanelEpisode {
                    features,
                    rewards: ep.rewards.clone(),
                }
            })
            .collect();
        SeriesPanel {
            agents: self.agents,
            feature_dim: self.feature_dim,
            episodes,
        }
    }
}

pub fn encode_traces(traces: &[EpisodeTrace], encoding: FeatureEncoding) -> Result<SeriesPanel, DiscoveryError> {
    let first = traces
        .iter()
        .flat_map(|t| t.steps.first())
        .next()
        .ok_or_else(|| DiscoveryError::InconsistentTraces("no recorded steps".into()))?;
    let agents = first.observations.len();
    let mask_len = first.observations.first().map_or(0, |o| o.mask.len());
    let dim = encoding.dim(mask_len);
    let mut episodes = Vec::with_capacity(traces.len());
    for trace in traces {
        if trace.steps.is_empty() {
            continue;
        }
        let mut features = Vec::with_capacity(trace.steps.len() * agents * dim);
        let mut rewards = Vec::with_capacity(trace.steps.len());
        for step in &trace.steps {
            if step.observations.len() != agents {
                return Err(DiscoveryError::InconsistentTraces(format!(
                    "episode {} step {} has {} agents, expected {agents}",
                    trace.episode,
                    step.step,
                    step.observations.len()
                )));
            }
            for obs in &step.observations {
                if obs.mask.len() != mask_len {
                    return Err(DiscoveryError::InconsistentTraces(format!(
                        "episode {} step {} has a mask of {} cells, expected {mask_len}",
                        trace.episode,
                        step.step,
                        obs.mask.len()
                    )));
                }
                encoding.encode_into(obs, &mut features)?;
            }
            rewards.push(step.reward);
        }
        episodes.push(PanelEpisode { features, rewards });
    }
    SeriesPanel::new(agents, dim, episodes)
}

/// Optional fixed nonlinear expansion appended to the linear inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    Linear,
    RandomRelu { width: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrangerConfig {
    #[serde(default = "defaults::lag")]
    pub lag: usize,
    /// Ridge strength per sample; the penalty is `n * ridge * |w|^2`.
    #[serde(default = "defaults::ridge")]
    pub ridge: f64,
    #[serde(default = "defaults::threshold")]
    pub threshold: f64,
    #[serde(default = "defaults::folds")]
    pub folds: usize,
    #[serde(default = "defaults::features")]
    pub features: FeatureMap,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    use super::FeatureMap;

    pub fn lag() -> usize {
        1
    }
    pub fn ridge() -> f64 {
        0.01
    }
    pub fn threshold() -> f64 {
        1.01
    }
    pub fn folds() -> usize {
        5
    }
    pub fn features() -> FeatureMap {
        FeatureMap::Linear
    }
}

impl Default for GrangerConfig {
    fn default() -> Self {
        GrangerConfig {
            lag: defaults::lag(),
            ridge: defaults::ridge(),
            threshold: defaults::threshold(),
            folds: defaults::folds(),
            features: defaults::features(),
            seed: 0,
        }
    }
}

impl GrangerConfig {
    pub fn validate(&self) -> Result<(), DiscoveryError> {
        let bad = |m: &str| Err(DiscoveryError::InvalidParameter(m.to_owned()));
        if self.threshold.is_nan() || self.threshold <= 1.0 {
            return bad("threshold must exceed 1");
        }
        if self.lag == 0 {
            return bad("lag must be at least 1");
        }
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return bad("ridge strength must be positive and finite");
        }
        if self.folds == 0 {
            return bad("folds must be at least 1");
        }
        if let FeatureMap::RandomRelu { width: 0 } = self.features {
            return bad("random feature width must be positive");
        }
        Ok(())
    }
}

/// Sufficient statistics of one fold of (x, y) rows.
#[derive(Debug, Clone)]
struct Moments {
    n: f64,
    sx: Vec<f64>,
    sy: f64,
    syy: f64,
    sxy: Vec<f64>,
    gram: Vec<f64>,
    dim: usize,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            n: 0.0,
            sx: vec![0.0; dim],
            sy: 0.0,
            syy: 0.0,
            sxy: vec![0.0; dim],
            gram: vec![0.0; dim * dim],
            dim,
        }
    }

    fn push_sparse(&mut self, x: &[(usize, f64)], y: f64) {
        self.n += 1.0;
        self.sy += y;
        self.syy += y * y;
        for &(i, xi) in x {
            self.sx[i] += xi;
            self.sxy[i] += xi * y;
            let row = i * self.dim;
            for &(j, xj) in x {
                self.gram[row + j] += xi * xj;
            }
        }
    }

    fn add(&mut self, other: &Moments) {
        self.n += other.n;
        self.sy += other.sy;
        self.syy += other.syy;
        for (a, b) in self.sx.iter_mut().zip(&other.sx) {
            *a += b;
        }
        for (a, b) in self.sxy.iter_mut().zip(&other.sxy) {
            *a += b;
        }
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
    }

    fn select(&self, cols: &[usize]) -> Moments {
        let d = cols.len();
        let mut gram = vec![0.0; d * d];
        for (a, &i) in cols.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                gram[a * d + b] = self.gram[i * self.dim + j];
            }
        }
        Moments {
            n: self.n,
            sx: cols.iter().map(|&i| self.sx[i]).collect(),
            sy: self.sy,
            syy: self.syy,
            sxy: cols.iter().map(|&i| self.sxy[i]).collect(),
            gram,
            dim: d,
        }
    }
}

/// Fitted ridge model `y = intercept + w . x`.
#[derive(Debug, Clone)]
struct RidgeFit {
    intercept: f64,
    weights: DVector<f64>,
}

impl RidgeFit {
    fn fit(train: &Moments, ridge: f64) -> RidgeFit {
        let d = train.dim;
        let n = train.n.max(1.0);
        let mean_x = DVector::from_iterator(d, train.sx.iter().map(|s| s / n));
        let mean_y = train.sy / n;
        if d == 0 {
            return RidgeFit {
                intercept: mean_y,
                weights: DVector::zeros(0),
            };
        }
        let gram = DMatrix::from_row_slice(d, d, &train.gram);
        let mut lhs = gram - (&mean_x * mean_x.transpose()) * n;
        for i in 0..d {
            lhs[(i, i)] += n * ridge;
        }
        let rhs = DVector::from_column_slice(&train.sxy) - &mean_x * (n * mean_y);
        let weights = lhs
            .cholesky()
            .map(|c| c.solve(&rhs))
            .unwrap_or_else(|| DVector::zeros(d));
        let intercept = mean_y - mean_x.dot(&weights);
        RidgeFit { intercept, weights }
    }

    /// Sum of squared errors over the rows summarised by `test`.
    fn sse(&self, test: &Moments) -> f64 {
        if test.n == 0.0 {
            return 0.0;
        }
        let w = &self.weights;
        let b = self.intercept;
        let sx = DVector::from_column_slice(&test.sx);
        let sxy = DVector::from_column_slice(&test.sxy);
        let gram = DMatrix::from_row_slice(test.dim, test.dim, &test.gram);
        let quad = if test.dim == 0 { 0.0 } else { w.dot(&(&gram * w)) };
        let sse = test.syy - 2.0 * b * test.sy - 2.0 * w.dot(&sxy) + test.n * b * b + 2.0 * b * w.dot(&sx) + quad;
        sse.max(0.0)
    }
}

fn fnv1a(hash: &mut u64, bytes: &[u8]) {
    for b in bytes {
        *hash ^= *b as u64;
        *hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

// Agent-order-invariant fingerprint of an episode.
fn episode_fingerprint(panel: &SeriesPanel, ep: &PanelEpisode, seed: u64) -> u64 {
    let mut agent_hashes: Vec<u64> = (0..panel.agents)
        .map(|a| {
            let mut h = FNV_OFFSET;
            for t in 0..ep.len() {
                for v in panel.features(ep, t, a) {
                    fnv1a(&mut h, &v.to_bits().to_le_bytes());
                }
            }
            h
        })
        .collect();
    agent_hashes.sort_unstable();
    let mut h = FNV_OFFSET;
    fnv1a(&mut h, &seed.to_le_bytes());
    for r in &ep.rewards {
        fnv1a(&mut h, &r.to_bits().to_le_bytes());
    }
    for a in agent_hashes {
        fnv1a(&mut h, &a.to_le_bytes());
    }
    h
}

/// Fixed random projection used by [`FeatureMap::RandomRelu`].
struct RandomRelu {
    weights: Vec<f64>,
    bias: Vec<f64>,
    input_dim: usize,
}

impl RandomRelu {
    fn new(input_dim: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
        let scale = (3.0 / input_dim.max(1) as f64).sqrt();
        let weights = (0..width * input_dim)
            .map(|_| rng.random_range(-1.0..1.0) * scale)
            .collect();
        let bias = (0..width).map(|_| rng.random_range(-0.5..0.5)).collect();
        RandomRelu {
            weights,
            bias,
            input_dim,
        }
    }

    fn apply(&self, x: &[(usize, f64)], offset: usize, out: &mut Vec<(usize, f64)>) {
        for (k, b) in self.bias.iter().enumerate() {
            let row = &self.weights[k * self.input_dim..(k + 1) * self.input_dim];
            let z = b + x.iter().map(|&(i, v)| row[i] * v).sum::<f64>();
            if z > 0.0 {
                out.push((offset + k, z));
            }
        }
    }
}

/// Column layout of the lagged design: agent blocks of `lag * feature_dim`
/// columns, then `lag` reward columns.
struct Design<'a> {
    panel: &'a SeriesPanel,
    lag: usize,
}

impl Design<'_> {
    fn block(&self) -> usize {
        self.lag * self.panel.feature_dim
    }

    fn linear_dim(&self) -> usize {
        self.panel.agents * self.block() + self.lag
    }

    fn agent_columns(&self, agent: usize) -> std::ops::Range<usize> {
        agent * self.block()..(agent + 1) * self.block()
    }

    /// Sparse linear row predicting `rewards[t]`, with `masked` agent's
    /// block left out (zeroed).
    fn row(&self, ep: &PanelEpisode, t: usize, masked: Option<usize>, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let dim = self.panel.feature_dim;
        for agent in 0..self.panel.agents {
            if Some(agent) == masked {
                continue;
            }
            for l in 0..self.lag {
                let base = agent * self.block() + l * dim;
                for (j, v) in self.panel.features(ep, t - l, agent).iter().enumerate() {
                    if *v != 0.0 {
                        out.push((base + j, *v));
                    }
                }
            }
        }
        let base = self.panel.agents * self.block();
        for l in 1..=self.lag {
            let r = ep.rewards[t - l];
            if r != 0.0 {
                out.push((base + l - 1, r));
            }
        }
    }
}

/// Computes `o_i -> r` evidence for every agent.
pub struct GrangerAnalysis<'a> {
    panel: &'a SeriesPanel,
    cfg: GrangerConfig,
    fold_of: Vec<usize>,
    folds: usize,
    relu: Option<RandomRelu>,
}

impl<'a> GrangerAnalysis<'a> {
    pub fn new(panel: &'a SeriesPanel, cfg: &GrangerConfig) -> Result<Self, DiscoveryError> {
        cfg.validate()?;
        let design = Design { panel, lag: cfg.lag };
        let rows: usize = panel.episodes.iter().map(|e| e.len().saturating_sub(cfg.lag)).sum();
        if rows == 0 {
            return Err(DiscoveryError::InsufficientData(cfg.lag));
        }
        let (mut first, mut constant) = (None, true);
        for ep in &panel.episodes {
            for r in ep.rewards.iter().skip(cfg.lag) {
                match first {
                    None => first = Some(*r),
                    Some(f) if f != *r => constant = false,
                    _ => {}
                }
            }
        }
        if constant {
            return Err(DiscoveryError::DegenerateTarget);
        }
        let folds = cfg.folds.min(panel.episodes.len()).max(1);
        let fold_of = panel
            .episodes
            .iter()
            .map(|ep| (episode_fingerprint(panel, ep, cfg.seed) % folds as u64) as usize)
            .collect();
        let relu = match cfg.features {
            FeatureMap::Linear => None,
            FeatureMap::RandomRelu { width } => Some(RandomRelu::new(design.linear_dim(), width, cfg.seed)),
        };
        Ok(GrangerAnalysis {
            panel,
            cfg: cfg.clone(),
            fold_of,
            folds,
            relu,
        })
    }

    fn design(&self) -> Design<'a> {
        Design {
            panel: self.panel,
            lag: self.cfg.lag,
        }
    }

    fn moments(&self, masked: Option<usize>) -> Vec<Moments> {
        let design = self.design();
        let linear = design.linear_dim();
        let dim = linear + self.relu.as_ref().map_or(0, |r| r.bias.len());
        let mut folds = vec![Moments::new(dim); self.folds];
        let mut row = Vec::new();
        let mut full = Vec::new();
        for (ep, &fold) in self.panel.episodes.iter().zip(&self.fold_of) {
            for t in self.cfg.lag..ep.len() {
                design.row(ep, t, masked, &mut row);
                if let Some(relu) = &self.relu {
                    full.clear();
                    full.extend_from_slice(&row);
                    relu.apply(&row, linear, &mut full);
                    folds[fold].push_sparse(&full, ep.rewards[t]);
                } else {
                    folds[fold].push_sparse(&row, ep.rewards[t]);
                }
            }
        }
        folds
    }

    /// Held-out mean squared error of a model over `cols` of the moments.
    fn heldout_mse(&self, folds: &[Moments], cols: Option<&[usize]>) -> f64 {
        let view: Vec<Moments> = match cols {
            Some(c) => folds.iter().map(|m| m.select(c)).collect(),
            None => folds.to_vec(),
        };
        let mut total = Moments::new(view[0].dim);
        for m in &view {
            total.add(m);
        }
        let nonempty = view.iter().filter(|m| m.n > 0.0).count();
        if nonempty < 2 {
            let fit = RidgeFit::fit(&total, self.cfg.ridge);
            return fit.sse(&total) / total.n;
        }
        let mut sse = 0.0;
        for test in view.iter().filter(|m| m.n > 0.0) {
            let mut train = total.clone();
            // train = total - test
            train.n -= test.n;
            train.sy -= test.sy;
            train.syy -= test.syy;
            for (a, b) in train.sx.iter_mut().zip(&test.sx) {
                *a -= b;
            }
            for (a, b) in train.sxy.iter_mut().zip(&test.sxy) {
                *a -= b;
            }
            for (a, b) in train.gram.iter_mut().zip(&test.gram) {
                *a -= b;
            }
            sse += RidgeFit::fit(&train, self.cfg.ridge).sse(test);
        }
        sse / total.n
    }

    fn target_variance(folds: &[Moments]) -> f64 {
        let (n, sy, syy) = folds
            .iter()
            .fold((0.0, 0.0, 0.0), |acc, m| (acc.0 + m.n, acc.1 + m.sy, acc.2 + m.syy));
        (syy / n - (sy / n).powi(2)).max(0.0)
    }

    /// `error_without_i / error_with_all` for every agent.
    pub fn scores(&self) -> Vec<f64> {
        let full = self.moments(None);
        let eps = 1e-12 * Self::target_variance(&full).max(f64::MIN_POSITIVE);
        let with_all = self.heldout_mse(&full, None);
        (0..self.panel.agents)
            .map(|agent| {
                let without = match self.relu {
                    None => {
                        let drop = self.design().agent_columns(agent);
                        let keep: Vec<usize> = (0..self.design().linear_dim()).filter(|c| !drop.contains(c)).collect();
                        self.heldout_mse(&full, Some(&keep))
                    }
                    Some(_) => self.heldout_mse(&self.moments(Some(agent)), None),
                };
                (without + eps) / (with_all + eps)
            })
            .collect()
    }
}

pub fn granger_scores(panel: &SeriesPanel, cfg: &GrangerConfig) -> Result<Vec<f64>, DiscoveryError> {
    Ok(GrangerAnalysis::new(panel, cfg)?.scores())
}

pub fn granger_score(panel: &SeriesPanel, agent: usize, cfg: &GrangerConfig) -> Result<f64, DiscoveryError> {
    if agent >= panel.agents {
        return Err(DiscoveryError::InvalidParameter(format!("agent {agent} out of range")));
    }
    Ok(granger_scores(panel, cfg)?[agent])
}

/// `(N+1) x (N+1)` adjacency over agent observations and the reward node
/// (index `N`). Only the `o_i -> r` column is ever populated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalMatrix {
    pub agents: usize,
    pub edges: Vec<Vec<u8>>,
    pub scores: Vec<Vec<f64>>,
}

impl CausalMatrix {
    pub fn empty(agents: usize) -> Self {
        CausalMatrix {
            agents,
            edges: vec![vec![0; agents + 1]; agents + 1],
            scores: vec![vec![0.0; agents + 1]; agents + 1],
        }
    }

    pub fn from_gates(gates: &[bool]) -> Self {
        let mut m = Self::empty(gates.len());
        for (i, g) in gates.iter().enumerate() {
            m.edges[i][gates.len()] = u8::from(*g);
        }
        m
    }

    pub fn reward_node(&self) -> usize {
        self.agents
    }

    /// `o_i -> r` edge flags.
    pub fn gates(&self) -> Vec<bool> {
        (0..self.agents).map(|i| self.edges[i][self.agents] == 1).collect()
    }

    pub fn reward_scores(&self) -> Vec<f64> {
        (0..self.agents).map(|i| self.scores[i][self.agents]).collect()
    }

    pub fn validate(&self) -> Result<(), DiscoveryError> {
        let n = self.agents + 1;
        let shape_ok = self.edges.len() == n
            && self.scores.len() == n
            && self.edges.iter().all(|r| r.len() == n)
            && self.scores.iter().all(|r| r.len() == n);
        if !shape_ok {
            return Err(DiscoveryError::InvalidParameter(format!("matrix must be {n}x{n}")));
        }
        for (i, row) in self.edges.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v > 1 || (*v == 1 && j != self.agents) || (*v == 1 && i == j) {
                    return Err(DiscoveryError::InvalidParameter(format!(
                        "entry ({i}, {j}) = {v} is not an o -> r edge flag"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn infer_causal_matrix(panel: &SeriesPanel, cfg: &GrangerConfig) -> Result<CausalMatrix, DiscoveryError> {
    cfg.validate()?;
    let scores = granger_scores(panel, cfg)?;
    let mut m = CausalMatrix::empty(panel.agents);
    let r = m.reward_node();
    for (i, s) in scores.iter().enumerate() {
        m.scores[i][r] = *s;
        m.edges[i][r] = u8::from(*s >= cfg.threshold);
    }
    Ok(m)
}

/// Per-agent causal gate applied to positive team rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedCredit {
    pub gates: Vec<bool>,
    /// Additionally require the agent to have seen a prey/tree the step
    /// before. Off by default.
    #[serde(default)]
    pub presence_refinement: bool,
}

impl PredictedCredit {
    pub fn from_matrix(matrix: &CausalMatrix) -> Self {
        PredictedCredit {
            gates: matrix.gates(),
            presence_refinement: false,
        }
    }

    pub fn agents(&self) -> usize {
        self.gates.len()
    }

    pub fn credit(&self, prev_obs: &[Observation], result: &JointStepResult, timestep: usize) -> CausalVector {
        if result.team_reward <= 0.0 {
            return CausalVector::ones(self.gates.len(), timestep);
        }
        let flags = self
            .gates
            .iter()
            .enumerate()
            .map(|(i, g)| *g && (!self.presence_refinement || prev_obs.get(i).is_some_and(|o| o.sees_target())));
        CausalVector::from_flags(flags, timestep)
    }
}

pub fn predicted_credit(
    matrix: &CausalMatrix,
    prev_obs: &[Observation],
    result: &JointStepResult,
    timestep: usize,
) -> CausalVector {
    PredictedCredit::from_matrix(matrix).credit(prev_obs, result, timestep)
}

/// Confusion summary over `(agent, positive-reward step)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub scored_steps: usize,
    pub agents: usize,
    pub true_positives: u64,
    pub true_negatives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub accuracy: f64,
    /// FP / (FP + TN).
    pub false_positive_rate: f64,
    /// FN / (FN + TP).
    pub false_negative_rate: f64,
    /// FP over all scored pairs.
    pub false_positive_fraction: f64,
    /// FN over all scored pairs.
    pub false_negative_fraction: f64,
    /// FP over all errors.
    pub false_positive_share_of_errors: f64,
}

impl DiscoveryReport {
    pub fn total(&self) -> u64 {
        self.true_positives + self.true_negatives + self.false_positives + self.false_negatives
    }

    fn from_counts(tp: u64, tn: u64, fp: u64, fn_: u64, scored_steps: usize, agents: usize) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let total = tp + tn + fp + fn_;
        DiscoveryReport {
            scored_steps,
            agents,
            true_positives: tp,
            true_negatives: tn,
            false_positives: fp,
            false_negatives: fn_,
            accuracy: ratio(tp + tn, total),
            false_positive_rate: ratio(fp, fp + tn),
            false_negative_rate: ratio(fn_, fn_ + tp),
            false_positive_fraction: ratio(fp, total),
            false_negative_fraction: ratio(fn_, total),
            false_positive_share_of_errors: ratio(fp, fp + fn_),
        }
    }

    /// Pools the confusion counts of two reports.
    pub fn merge(&self, other: &DiscoveryReport) -> DiscoveryReport {
        Self::from_counts(
            self.true_positives + other.true_positives,
            self.true_negatives + other.true_negatives,
            self.false_positives + other.false_positives,
            self.false_negatives + other.false_negatives,
            self.scored_steps + other.scored_steps,
            self.agents.max(other.agents),
        )
    }
}

/// Scores predictions against oracle labels on the steps whose team reward
/// was positive.
pub fn score_against_oracle(
    predicted: &[CausalVector],
    truth: &[CausalVector],
    rewards: &[f64],
) -> Result<DiscoveryReport, DiscoveryError> {
    if predicted.len() != truth.len() {
        return Err(DiscoveryError::LengthMismatch {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    if rewards.len() != truth.len() {
        return Err(DiscoveryError::LengthMismatch {
            expected: truth.len(),
            got: rewards.len(),
        });
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    let mut steps = 0;
    let mut agents = 0;
    for ((p, t), r) in predicted.iter().zip(truth).zip(rewards) {
        if *r <= 0.0 {
            continue;
        }
        if p.len() != t.len() {
            return Err(DiscoveryError::LengthMismatch {
                expected: t.len(),
                got: p.len(),
            });
        }
        steps += 1;
        agents = agents.max(t.len());
        for (pv, tv) in p.values.iter().zip(&t.values) {
            match (*pv == 1, *tv == 1) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    if steps == 0 {
        return Err(DiscoveryError::NoPositiveRewardSteps);
    }
    Ok(DiscoveryReport::from_counts(tp, tn, fp, fn_, steps, agents))
}

/// Applies `credit` to every recorded step and scores it against the oracle
/// labels stored in the traces.
pub fn score_traces(credit: &PredictedCredit, traces: &[EpisodeTrace]) -> Result<DiscoveryReport, DiscoveryError> {
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    let mut rewards = Vec::new();
    for step in traces.iter().flat_map(|t| &t.steps) {
        let result = JointStepResult {
            observations: Vec::new(),
            team_reward: step.reward,
            events: Vec::new(),
            done: false,
            cleared: false,
        };
        predicted.push(credit.credit(&step.observations, &result, step.step));
        truth.push(step.oracle.clone());
        rewards.push(step.reward);
    }
    score_against_oracle(&predicted, &truth, &rewards)
}

//! Axelrod-type cultural dynamics on a complete graph.
//!
//! Each task is one pairwise interaction. Creation draws the ordered
//! `(source, target)` pair from the master stream; execution computes the
//! overlap over all `F` features and possibly copies one of the source's
//! traits into the target.

use std::sync::atomic::{AtomicU8, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{digest_bytes, Model};
use crate::rng::{self, SimRng};

pub type AgentId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct CulturalParams {
    /// Number of agents.
    pub agents: usize,
    /// Features per agent.
    pub features: usize,
    /// Traits per feature.
    pub traits: u8,
    /// Interactions happen only when overlap is at least this value.
    pub omega_gate: f64,
    /// Total number of interactions.
    pub steps: u64,
}

impl CulturalParams {
    /// Full-scale workload: `N = 10^4`, `q = 3`, `2×10^6` steps.
    pub fn full_scale(features: usize) -> Self {
        CulturalParams {
            agents: 10_000,
            features,
            traits: 3,
            omega_gate: 0.0,
            steps: 2_000_000,
        }
    }

    /// Same population, a tenth of the steps.
    pub fn desk_scale(features: usize) -> Self {
        CulturalParams {
            steps: 200_000,
            ..Self::full_scale(features)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents < 2 {
            return Err(Error::Params(
                "cultural model needs at least 2 agents".into(),
            ));
        }
        if self.agents > AgentId::MAX as usize {
            return Err(Error::Params(format!("too many agents: {}", self.agents)));
        }
        if self.features == 0 {
            return Err(Error::Params("features must be positive".into()));
        }
        if self.traits == 0 {
            return Err(Error::Params("traits per feature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.omega_gate) {
            return Err(Error::Params(format!(
                "omega_gate {} outside [0, 1]",
                self.omega_gate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CulturalRecipe {
    pub source: AgentId,
    pub target: AgentId,
    pub child_seed: u64,
}

/// Agents seen in the current cycle as target (written) or source (read).
#[derive(Debug, Clone)]
pub struct CulturalRecord {
    flags: Vec<u8>,
    touched: Vec<AgentId>,
}

const SEEN_TARGET: u8 = 1;
const SEEN_SOURCE: u8 = 2;

impl CulturalRecord {
    fn new(agents: usize) -> Self {
        CulturalRecord {
            flags: vec![0; agents],
            touched: Vec::new(),
        }
    }

    fn mark(&mut self, agent: AgentId, flag: u8) {
        let f = &mut self.flags[agent as usize];
        if *f == 0 {
            self.touched.push(agent);
        }
        *f |= flag;
    }

    fn has(&self, agent: AgentId, flag: u8) -> bool {
        self.flags[agent as usize] & flag != 0
    }

    pub fn is_empty(&self) -> bool {
        self.touched.is_empty()
    }

    pub fn targets_seen(&self) -> Vec<AgentId> {
        let mut v: Vec<_> = self
            .touched
            .iter()
            .copied()
            .filter(|&a| self.has(a, SEEN_TARGET))
            .collect();
        v.sort_unstable();
        v
    }

    pub fn sources_seen(&self) -> Vec<AgentId> {
        let mut v: Vec<_> = self
            .touched
            .iter()
            .copied()
            .filter(|&a| self.has(a, SEEN_SOURCE))
            .collect();
        v.sort_unstable();
        v
    }
}

impl PartialEq for CulturalRecord {
    fn eq(&self, other: &Self) -> bool {
        self.flags == other.flags
    }
}

pub struct CulturalCreator {
    master_seed: u64,
    created: u64,
    stream: SimRng,
}

pub struct CulturalModel {
    params: CulturalParams,
    traits: Vec<AtomicU8>,
}

impl CulturalModel {
    /// Draws the initial traits i.i.d. uniform over `[0, q)` from the
    /// initialization stream of `seed`.
    pub fn new(params: CulturalParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut init = rng::init_stream(seed);
        let q = params.traits;
        let traits = (0..params.agents * params.features)
            .map(|_| AtomicU8::new(init.gen_range(0..q)))
            .collect();
        Ok(CulturalModel { params, traits })
    }

    /// A model with an explicit trait matrix, row-major `N×F`.
    pub fn from_traits(params: CulturalParams, matrix: &[u8]) -> Result<Self> {
        params.validate()?;
        if matrix.len() != params.agents * params.features {
            return Err(Error::Params(format!(
                "trait matrix has {} entries, expected {}",
                matrix.len(),
                params.agents * params.features
            )));
        }
        if let Some(bad) = matrix.iter().find(|&&t| t >= params.traits) {
            return Err(Error::Params(format!(
                "trait {bad} outside [0, {})",
                params.traits
            )));
        }
        Ok(CulturalModel {
            traits: matrix.iter().map(|&t| AtomicU8::new(t)).collect(),
            params,
        })
    }

    pub fn params(&self) -> &CulturalParams {
        &self.params
    }

    fn row(&self, agent: AgentId) -> &[AtomicU8] {
        let f = self.params.features;
        let start = agent as usize * f;
        &self.traits[start..start + f]
    }

    pub fn trait_of(&self, agent: AgentId, feature: usize) -> u8 {
        self.row(agent)[feature].load(Ordering::Relaxed)
    }

    pub fn traits_snapshot(&self) -> Vec<u8> {
        self.traits
            .iter()
            .map(|t| t.load(Ordering::Relaxed))
            .collect()
    }

    /// Fraction of features on which `a` and `b` hold the same trait.
    pub fn overlap(&self, a: AgentId, b: AgentId) -> f64 {
        self.shared_features(a, b) as f64 / self.params.features as f64
    }

    fn shared_features(&self, a: AgentId, b: AgentId) -> usize {
        assert!(
            (a as usize) < self.params.agents && (b as usize) < self.params.agents,
            "agent id out of range"
        );
        self.row(a)
            .iter()
            .zip(self.row(b))
            .filter(|(x, y)| x.load(Ordering::Relaxed) == y.load(Ordering::Relaxed))
            .count()
    }

    /// Draws an ordered pair of distinct agents, uniformly.
    pub fn select_pair(&self, stream: &mut SimRng) -> (AgentId, AgentId) {
        let n = self.params.agents as AgentId;
        let source = stream.gen_range(0..n);
        let mut target = stream.gen_range(0..n - 1);
        if target >= source {
            target += 1;
        }
        (source, target)
    }

    /// Executes one interaction.
    ///
    /// With `o` the overlap, the interaction is allowed when
    /// `omega_gate <= o < 1`; it then succeeds with probability `o`, and a
    /// uniformly chosen differing feature of the target takes the source's
    /// trait. The child stream is drawn from at most twice: acceptance, then
    /// feature choice.
    pub fn social_influence(&self, recipe: &CulturalRecipe) {
        let f = self.params.features;
        let shared = self.shared_features(recipe.source, recipe.target);
        let o = shared as f64 / f as f64;
        if shared == f || o < self.params.omega_gate {
            return;
        }
        let mut child = rng::stream(recipe.child_seed);
        if child.gen::<f64>() >= o {
            return;
        }
        let pick = child.gen_range(0..f - shared);
        let src = self.row(recipe.source);
        let tgt = self.row(recipe.target);
        let feature = (0..f)
            .filter(|&i| src[i].load(Ordering::Relaxed) != tgt[i].load(Ordering::Relaxed))
            .nth(pick)
            .expect("differing feature count changed during execution");
        tgt[feature].store(src[feature].load(Ordering::Relaxed), Ordering::Relaxed);
    }
}

impl Model for CulturalModel {
    type Recipe = CulturalRecipe;
    type Record = CulturalRecord;
    type Creator = CulturalCreator;

    fn creator(&self, master_seed: u64) -> CulturalCreator {
        CulturalCreator {
            master_seed,
            created: 0,
            stream: rng::create_stream(master_seed),
        }
    }

    fn create(&self, c: &mut CulturalCreator) -> Option<CulturalRecipe> {
        if c.created >= self.params.steps {
            return None;
        }
        let (source, target) = self.select_pair(&mut c.stream);
        let recipe = CulturalRecipe {
            source,
            target,
            child_seed: rng::child_seed(c.master_seed, c.created),
        };
        c.created += 1;
        Some(recipe)
    }

    fn new_record(&self) -> CulturalRecord {
        CulturalRecord::new(self.params.agents)
    }

    /// A task must wait if it reads or writes a row an earlier, uncompleted
    /// task writes, or writes a row an earlier one reads.
    fn depends(&self, r: &CulturalRecord, recipe: &CulturalRecipe) -> bool {
        r.has(recipe.source, SEEN_TARGET) || r.has(recipe.target, SEEN_TARGET | SEEN_SOURCE)
    }

    fn absorb(&self, r: &mut CulturalRecord, recipe: &CulturalRecipe) {
        r.mark(recipe.target, SEEN_TARGET);
        r.mark(recipe.source, SEEN_SOURCE);
    }

    fn reset(&self, r: &mut CulturalRecord) {
        for a in r.touched.drain(..) {
            r.flags[a as usize] = 0;
        }
    }

    fn execute(&self, recipe: &CulturalRecipe) {
        self.social_influence(recipe);
    }

    fn state_digest(&self) -> u64 {
        let p = &self.params;
        digest_bytes(
            &[p.agents as u64, p.features as u64, p.traits as u64],
            self.traits.iter().map(|t| t.load(Ordering::Relaxed)),
        )
    }

    fn conflicts(&self, earlier: &CulturalRecipe, later: &CulturalRecipe) -> bool {
        earlier.target == later.source
            || earlier.target == later.target
            || earlier.source == later.target
    }
}

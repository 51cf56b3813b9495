//! SIR epidemic on a ring lattice, updated synchronously in two task types.
//!
//! Agents are split into equal contiguous subsets. Per step, the creation
//! schedule emits one `ComputeNew` task per subset (fill `next` from
//! `current` and neighbor states), then one `Commit` task per subset (copy
//! `next` into `current`). Dependence between subsets goes through the
//! aggregate graph, built once per run inside the timed region.

use std::sync::atomic::{AtomicU8, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{digest_bytes, Model};
use crate::rng;

pub type SubsetId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Health {
    Susceptible = 0,
    Infected = 1,
    Recovered = 2,
}

impl Health {
    pub fn from_u8(v: u8) -> Health {
        match v {
            0 => Health::Susceptible,
            1 => Health::Infected,
            2 => Health::Recovered,
            _ => panic!("invalid health state {v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirParams {
    pub agents: usize,
    /// Ring degree; even.
    pub degree: usize,
    pub p_si: f64,
    pub p_ir: f64,
    pub p_rs: f64,
    pub steps: u64,
    /// Agents per subset; must divide `agents`.
    pub subset_size: usize,
    /// Probability that an agent starts infected.
    pub initial_infected: f64,
}

impl SirParams {
    pub const DEFAULT_INITIAL_INFECTED: f64 = 0.1;

    /// Full-scale workload: `N = 4000`, `k = 14`, 3000 steps.
    pub fn full_scale(subset_size: usize) -> Self {
        SirParams {
            agents: 4000,
            degree: 14,
            p_si: 0.8,
            p_ir: 0.1,
            p_rs: 0.3,
            steps: 3000,
            subset_size,
            initial_infected: Self::DEFAULT_INITIAL_INFECTED,
        }
    }

    pub fn desk_scale(subset_size: usize) -> Self {
        SirParams {
            agents: 400,
            steps: 300,
            ..Self::full_scale(subset_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.degree.is_multiple_of(2) || self.degree == 0 {
            return Err(Error::Params(format!(
                "ring degree {} must be even and positive",
                self.degree
            )));
        }
        if self.degree >= self.agents {
            return Err(Error::Params(format!(
                "ring degree {} must be below agent count {}",
                self.degree, self.agents
            )));
        }
        if self.agents > u32::MAX as usize {
            return Err(Error::Params(format!("too many agents: {}", self.agents)));
        }
        for (name, p) in [
            ("p_si", self.p_si),
            ("p_ir", self.p_ir),
            ("p_rs", self.p_rs),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Params(format!("{name} = {p} outside (0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.initial_infected) {
            return Err(Error::Params(format!(
                "initial infected fraction {} outside [0, 1]",
                self.initial_infected
            )));
        }
        check_subset_size(self.agents, self.subset_size)
    }
}

fn check_subset_size(agents: usize, s: usize) -> Result<()> {
    if s == 0 || !agents.is_multiple_of(s) {
        return Err(Error::Params(format!(
            "subset size {s} does not divide agent count {agents}"
        )));
    }
    Ok(())
}

/// Ring lattice: node `i` is linked to `i±1, …, i±k/2 (mod N)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingLattice {
    nodes: usize,
    degree: usize,
    neighbors: Vec<u32>,
}

pub fn build_ring(nodes: usize, degree: usize) -> Result<RingLattice> {
    if !degree.is_multiple_of(2) {
        return Err(Error::Params(format!("ring degree {degree} must be even")));
    }
    if degree >= nodes {
        return Err(Error::Params(format!(
            "ring degree {degree} must be below node count {nodes}"
        )));
    }
    let half = degree / 2;
    let mut neighbors = Vec::with_capacity(nodes * degree);
    for i in 0..nodes {
        for d in 1..=half {
            neighbors.push(((i + nodes - d) % nodes) as u32);
            neighbors.push(((i + d) % nodes) as u32);
        }
    }
    Ok(RingLattice {
        nodes,
        degree,
        neighbors,
    })
}

impl RingLattice {
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.neighbors[node * self.degree..(node + 1) * self.degree]
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).contains(&(b as u32))
    }
}

/// Equal contiguous subsets and their aggregate adjacency (self included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    subset_size: usize,
    n_subsets: usize,
    adjacency: Vec<bool>,
    aggregate: Vec<Vec<SubsetId>>,
}

pub fn partition_and_aggregate(graph: &RingLattice, subset_size: usize) -> Result<Partition> {
    check_subset_size(graph.nodes(), subset_size)?;
    let n_subsets = graph.nodes() / subset_size;
    let mut adjacency = vec![false; n_subsets * n_subsets];
    for x in 0..n_subsets {
        adjacency[x * n_subsets + x] = true;
    }
    for a in 0..graph.nodes() {
        let x = a / subset_size;
        for &b in graph.neighbors(a) {
            let y = b as usize / subset_size;
            adjacency[x * n_subsets + y] = true;
        }
    }
    let aggregate = (0..n_subsets)
        .map(|x| {
            (0..n_subsets)
                .filter(|&y| adjacency[x * n_subsets + y])
                .map(|y| y as SubsetId)
                .collect()
        })
        .collect();
    Ok(Partition {
        subset_size,
        n_subsets,
        adjacency,
        aggregate,
    })
}

impl Partition {
    pub fn subset_size(&self) -> usize {
        self.subset_size
    }

    pub fn n_subsets(&self) -> usize {
        self.n_subsets
    }

    pub fn subset_of(&self, agent: usize) -> SubsetId {
        (agent / self.subset_size) as SubsetId
    }

    pub fn agents(&self, subset: SubsetId) -> std::ops::Range<usize> {
        let start = subset as usize * self.subset_size;
        start..start + self.subset_size
    }

    pub fn adjacent(&self, x: SubsetId, y: SubsetId) -> bool {
        self.adjacency[x as usize * self.n_subsets + y as usize]
    }

    /// Subsets aggregate-adjacent to `x`, including `x`.
    pub fn aggregate_neighbors(&self, x: SubsetId) -> &[SubsetId] {
        &self.aggregate[x as usize]
    }
}

/// Agent states and contact graph, generated before timing starts.
pub struct SirState {
    params: SirParams,
    graph: RingLattice,
    current: Vec<AtomicU8>,
    next: Vec<AtomicU8>,
}

impl SirState {
    /// Each agent starts infected with probability `initial_infected`,
    /// susceptible otherwise, drawn from the initialization stream of `seed`.
    pub fn new(params: SirParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut init = rng::init_stream(seed);
        let states: Vec<Health> = (0..params.agents)
            .map(|_| {
                if init.gen::<f64>() < params.initial_infected {
                    Health::Infected
                } else {
                    Health::Susceptible
                }
            })
            .collect();
        Self::from_states(params, &states)
    }

    pub fn from_states(params: SirParams, states: &[Health]) -> Result<Self> {
        params.validate()?;
        if states.len() != params.agents {
            return Err(Error::Params(format!(
                "{} initial states for {} agents",
                states.len(),
                params.agents
            )));
        }
        let graph = build_ring(params.agents, params.degree)?;
        Ok(SirState {
            current: states.iter().map(|&h| AtomicU8::new(h as u8)).collect(),
            next: states.iter().map(|&h| AtomicU8::new(h as u8)).collect(),
            params,
            graph,
        })
    }

    pub fn params(&self) -> &SirParams {
        &self.params
    }

    pub fn graph(&self) -> &RingLattice {
        &self.graph
    }

    pub fn current(&self) -> Vec<Health> {
        self.current
            .iter()
            .map(|h| Health::from_u8(h.load(Ordering::Relaxed)))
            .collect()
    }

    pub fn next(&self) -> Vec<Health> {
        self.next
            .iter()
            .map(|h| Health::from_u8(h.load(Ordering::Relaxed)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SirPhase {
    ComputeNew,
    Commit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SirRecipe {
    pub subset: SubsetId,
    pub phase: SirPhase,
    pub child_seed: u64,
}

const COMPUTE: u8 = 1;
const COMMIT: u8 = 2;

/// Subsets with a traversed `ComputeNew` / `Commit` task, plus the subsets
/// each set blocks through the aggregate graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SirRecord {
    seen: Vec<u8>,
    blocked: Vec<u8>,
    touched: Vec<SubsetId>,
}

impl SirRecord {
    fn new(n_subsets: usize) -> Self {
        SirRecord {
            seen: vec![0; n_subsets],
            blocked: vec![0; n_subsets],
            touched: Vec::new(),
        }
    }

    fn seen_with(&self, flag: u8) -> Vec<SubsetId> {
        (0..self.seen.len() as SubsetId)
            .filter(|&x| self.seen[x as usize] & flag != 0)
            .collect()
    }

    pub fn compute_seen(&self) -> Vec<SubsetId> {
        self.seen_with(COMPUTE)
    }

    pub fn commit_seen(&self) -> Vec<SubsetId> {
        self.seen_with(COMMIT)
    }
}

pub struct SirCreator {
    master_seed: u64,
    created: u64,
}

pub struct SirModel {
    state: SirState,
    partition: Partition,
}

impl SirModel {
    pub fn new(state: SirState, partition: Partition) -> Result<Self> {
        if partition.n_subsets() * partition.subset_size() != state.params.agents {
            return Err(Error::Params(
                "partition does not cover the agent population".into(),
            ));
        }
        Ok(SirModel { state, partition })
    }

    /// Builds the partition with the configured subset size.
    pub fn from_state(state: SirState) -> Result<Self> {
        let partition = partition_and_aggregate(&state.graph, state.params.subset_size)?;
        Self::new(state, partition)
    }

    pub fn state(&self) -> &SirState {
        &self.state
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn params(&self) -> &SirParams {
        &self.state.params
    }

    /// Number of recipes the creation schedule emits.
    pub fn total_tasks(&self) -> u64 {
        self.state.params.steps * 2 * self.partition.n_subsets() as u64
    }

    /// Recipe `index` of the creation schedule, without the seed.
    pub fn schedule(&self, index: u64) -> (u64, SubsetId, SirPhase) {
        let ns = self.partition.n_subsets() as u64;
        let step = index / (2 * ns);
        let r = index % (2 * ns);
        let phase = if r < ns {
            SirPhase::ComputeNew
        } else {
            SirPhase::Commit
        };
        (step, (r % ns) as SubsetId, phase)
    }

    fn infected_neighbors(&self, agent: usize) -> usize {
        self.state
            .graph
            .neighbors(agent)
            .iter()
            .filter(|&&b| {
                self.state.current[b as usize].load(Ordering::Relaxed) == Health::Infected as u8
            })
            .count()
    }

    /// S→I with probability `p_si × infected fraction`, I→R with `p_ir`,
    /// R→S with `p_rs`. One draw per agent in ascending id order.
    pub fn step_compute(&self, recipe: &SirRecipe) {
        let p = &self.state.params;
        let k = self.state.graph.degree() as f64;
        let mut child = rng::stream(recipe.child_seed);
        for a in self.partition.agents(recipe.subset) {
            let u: f64 = child.gen();
            let now = Health::from_u8(self.state.current[a].load(Ordering::Relaxed));
            let new = match now {
                Health::Susceptible => {
                    if u < p.p_si * (self.infected_neighbors(a) as f64 / k) {
                        Health::Infected
                    } else {
                        Health::Susceptible
                    }
                }
                Health::Infected if u < p.p_ir => Health::Recovered,
                Health::Recovered if u < p.p_rs => Health::Susceptible,
                same => same,
            };
            self.state.next[a].store(new as u8, Ordering::Relaxed);
        }
    }

    pub fn step_commit(&self, recipe: &SirRecipe) {
        for a in self.partition.agents(recipe.subset) {
            self.state.current[a].store(
                self.state.next[a].load(Ordering::Relaxed),
                Ordering::Relaxed,
            );
        }
    }
}

impl Model for SirModel {
    type Recipe = SirRecipe;
    type Record = SirRecord;
    type Creator = SirCreator;

    fn creator(&self, master_seed: u64) -> SirCreator {
        SirCreator {
            master_seed,
            created: 0,
        }
    }

    fn create(&self, c: &mut SirCreator) -> Option<SirRecipe> {
        if c.created >= self.total_tasks() {
            return None;
        }
        let (_, subset, phase) = self.schedule(c.created);
        let recipe = SirRecipe {
            subset,
            phase,
            child_seed: rng::child_seed(c.master_seed, c.created),
        };
        c.created += 1;
        Some(recipe)
    }

    fn new_record(&self) -> SirRecord {
        SirRecord::new(self.partition.n_subsets())
    }

    /// `Commit x` waits for traversed `ComputeNew` tasks of subsets adjacent
    /// to `x` (same subset included); `ComputeNew x` waits for traversed
    /// `Commit` tasks of adjacent subsets. A traversed task of the same type
    /// on the same subset also blocks; the creation schedule always puts an
    /// opposite-type task of that subset in between, so this never adds
    /// waiting there.
    fn depends(&self, r: &SirRecord, recipe: &SirRecipe) -> bool {
        let x = recipe.subset as usize;
        let (own, other) = match recipe.phase {
            SirPhase::ComputeNew => (COMPUTE, COMMIT),
            SirPhase::Commit => (COMMIT, COMPUTE),
        };
        r.blocked[x] & other != 0 || r.seen[x] & own != 0
    }

    fn absorb(&self, r: &mut SirRecord, recipe: &SirRecipe) {
        let flag = match recipe.phase {
            SirPhase::ComputeNew => COMPUTE,
            SirPhase::Commit => COMMIT,
        };
        let x = recipe.subset as usize;
        if r.seen[x] & flag != 0 {
            return;
        }
        if r.seen[x] == 0 && r.blocked[x] == 0 {
            r.touched.push(recipe.subset);
        }
        r.seen[x] |= flag;
        for &y in self.partition.aggregate_neighbors(recipe.subset) {
            let y = y as usize;
            if r.seen[y] == 0 && r.blocked[y] == 0 {
                r.touched.push(y as SubsetId);
            }
            r.blocked[y] |= flag;
        }
    }

    fn reset(&self, r: &mut SirRecord) {
        for x in r.touched.drain(..) {
            r.seen[x as usize] = 0;
            r.blocked[x as usize] = 0;
        }
    }

    fn execute(&self, recipe: &SirRecipe) {
        match recipe.phase {
            SirPhase::ComputeNew => self.step_compute(recipe),
            SirPhase::Commit => self.step_commit(recipe),
        }
    }

    fn state_digest(&self) -> u64 {
        let s = &self.state;
        digest_bytes(
            &[s.params.agents as u64, s.params.degree as u64],
            s.current
                .iter()
                .chain(&s.next)
                .map(|h| h.load(Ordering::Relaxed)),
        )
    }

    fn conflicts(&self, earlier: &SirRecipe, later: &SirRecipe) -> bool {
        let (x, y) = (earlier.subset, later.subset);
        if earlier.phase == later.phase {
            x == y
        } else {
            self.partition.adjacent(x, y)
        }
    }
}

//! Coarse-to-fine evolutionary search.
//!
//! The population starts from a single architecture. Each iteration picks a
//! member uniformly, mutates one of its blocks, and admits the mutant if it
//! fits the FLOPs / parameter / depth budgets; admitted mutants are scored
//! and the lowest-scoring members are dropped once the population exceeds
//! its cap. At iteration `T/2` only the top ten survive and mutation
//! switches from coarse (type, kernel, width, depth) to fine (kernel, width).
//!
//! Each candidate is scored with random stream `(seed, structural hash)`, so
//! scores do not depend on evaluation order and batches can be scored in
//! parallel by an [`Evaluator`] without changing results.

use crate::arch::{
    ArchitectureSpec, BlockSpec, BlockType, Resolution, ValidationError, EXPANSION_CHOICES, KERNEL_CHOICES,
    MAX_BLOCK_LAYERS, OUTPUT_STRIDE,
};
use crate::cost::{cost_unchecked, CostReport};
use crate::entropy::{MsepScorer, MsepWeights, ScoreError, Scorer};
use crate::rng::SeededRng;
use crate::zoo;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

/// Width multipliers as exact fractions: 1/1.5, 1/1.25, 1, 1.25, 1.5, 2.
pub const WIDTH_SCALES: [(usize, usize); 6] = [(2, 3), (4, 5), (1, 1), (5, 4), (3, 2), (2, 1)];
pub const DEPTH_STEPS: [isize; 4] = [-2, -1, 1, 2];
pub const CHANNEL_QUANTUM: usize = 8;
pub const DEFAULT_MAX_DEPTH: usize = 128;
pub const DEFAULT_FINE_KEEP: usize = 10;

/// `width · num / den` rounded to the nearest multiple of 8 (halves round up), at least 8.
pub fn scale_width(width: usize, (num, den): (usize, usize)) -> usize {
    let q = CHANNEL_QUANTUM;
    let units = (2 * width * num + q * den) / (2 * q * den);
    units.max(1) * q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MutationFlag {
    pub fine: bool,
}

impl MutationFlag {
    pub const COARSE: MutationFlag = MutationFlag { fine: false };
    pub const FINE: MutationFlag = MutationFlag { fine: true };
}

/// Block types a coarse mutation may switch to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace {
    pub block_types: Vec<BlockType>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace { block_types: vec![BlockType::ResBlock] }
    }
}

fn convert(block: &mut BlockSpec, to: BlockType, rng: &mut SeededRng) {
    block.block_type = to;
    match to {
        BlockType::ResBlock | BlockType::Bottleneck => {
            if block.bottleneck_channels == 0 {
                block.bottleneck_channels = scale_width(block.out_channels, (1, 4));
            }
            block.expansion = None;
        }
        BlockType::Mobile => {
            block.bottleneck_channels = 0;
            block.expansion = Some(*rng.choose(&EXPANSION_CHOICES));
        }
        BlockType::Conv => {
            block.bottleneck_channels = 0;
            block.expansion = None;
        }
    }
}

/// Splits a block deeper than [`MAX_BLOCK_LAYERS`] into two halves; the
/// second half runs at stride 1 on the first half's output.
fn split(block: BlockSpec) -> Vec<BlockSpec> {
    if block.num_layers <= MAX_BLOCK_LAYERS {
        return vec![block];
    }
    let first_layers = block.num_layers.div_ceil(2);
    let second = BlockSpec {
        in_channels: block.out_channels,
        stride: 1,
        num_layers: block.num_layers - first_layers,
        ..block.clone()
    };
    let first = BlockSpec { num_layers: first_layers, ..block };
    vec![first, second]
}

/// Alters one uniformly chosen block.
///
/// Draw order: block index, then (coarse, non-stem only) block type, kernel,
/// output-width scale, bottleneck-width scale (bottleneck blocks only), then
/// (coarse only) depth step. The stem keeps its type. Afterwards each
/// block's input width is reset to its predecessor's output width.
pub fn mutate(arch: &ArchitectureSpec, rng: &mut SeededRng, flag: MutationFlag, space: &SearchSpace) -> ArchitectureSpec {
    let mut blocks = arch.blocks.clone();
    if blocks.is_empty() {
        return ArchitectureSpec::new(blocks);
    }
    let idx = rng.below(blocks.len());
    let mut block = blocks[idx].clone();

    if !flag.fine && idx > 0 && !space.block_types.is_empty() {
        let to = *rng.choose(&space.block_types);
        if to != block.block_type {
            convert(&mut block, to, rng);
        }
    }
    block.kernel = *rng.choose(&KERNEL_CHOICES);
    block.out_channels = scale_width(block.out_channels, *rng.choose(&WIDTH_SCALES));
    if block.block_type.has_bottleneck() {
        block.bottleneck_channels = scale_width(block.bottleneck_channels, *rng.choose(&WIDTH_SCALES));
    }
    if !flag.fine {
        let step = *rng.choose(&DEPTH_STEPS);
        block.num_layers = block.num_layers.saturating_add_signed(step).max(1);
    }

    blocks.splice(idx..=idx, split(block));
    for i in 1..blocks.len() {
        blocks[i].in_channels = blocks[i - 1].out_channels;
    }
    ArchitectureSpec::new(blocks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// FLOPs ceiling (multiply-accumulates) at `budget_resolution`.
    pub flops_budget: u64,
    pub params_budget: Option<u64>,
    pub budget_resolution: Resolution,
    /// Maximum main-path convolution layers.
    pub max_depth: usize,
    pub iterations: usize,
    pub population_size: usize,
    pub alpha: MsepWeights,
    /// Side of the square noise image used for scoring.
    pub resolution: usize,
    /// Forward passes averaged per score.
    pub repeats: usize,
    pub seed: u64,
    pub initial_arch: ArchitectureSpec,
    pub block_types: Vec<BlockType>,
    /// Pre-fill the population with mutants of the initial architecture.
    pub seed_population: bool,
    /// Survivors of the cull at `T/2`.
    pub fine_keep: usize,
    /// Mutants drawn from the same population snapshot before scoring.
    /// 1 is the plain one-at-a-time loop; larger batches let an
    /// [`Evaluator`] score in parallel. Results depend on the batch size but
    /// not on how the evaluator schedules a batch.
    pub batch_size: usize,
}

impl Default for SearchConfig {
    /// Full-scale settings: N = 256, T = 96000, 384×384 scoring, α = (0,0,1,1,6),
    /// FLOPs capped at ResNet-50's cost at 1333×800.
    fn default() -> Self {
        let budget_resolution = Resolution::new(800, 1333);
        SearchConfig {
            flops_budget: cost_unchecked(&zoo::resnet50(), budget_resolution).flops,
            params_budget: None,
            budget_resolution,
            max_depth: DEFAULT_MAX_DEPTH,
            iterations: 96_000,
            population_size: 256,
            alpha: MsepWeights::default(),
            resolution: 384,
            repeats: 1,
            seed: 0,
            initial_arch: zoo::initial_structure(),
            block_types: vec![BlockType::ResBlock],
            seed_population: false,
            fine_keep: DEFAULT_FINE_KEEP,
            batch_size: 1,
        }
    }
}

impl SearchConfig {
    /// Desk-scale profile: 64×64 scoring, N = 32, T = 2000, starting from the
    /// quarter-width initial structure with a FLOPs budget twice its own.
    pub fn toy() -> Self {
        let budget_resolution = Resolution::square(64);
        let initial_arch = zoo::initial_quarter();
        SearchConfig {
            flops_budget: 2 * cost_unchecked(&initial_arch, budget_resolution).flops,
            budget_resolution,
            iterations: 2000,
            population_size: 32,
            resolution: 64,
            initial_arch,
            ..SearchConfig::default()
        }
    }

    pub fn scorer(&self) -> MsepScorer {
        MsepScorer { repeats: self.repeats, ..MsepScorer::new(self.alpha, Resolution::square(self.resolution)) }
    }

    pub fn space(&self) -> SearchSpace {
        SearchSpace { block_types: self.block_types.clone() }
    }

    pub fn check(&self) -> Result<(), SearchError> {
        let bad = |msg: &str| Err(SearchError::InvalidConfig(String::from(msg)));
        if self.population_size == 0 {
            return bad("population size must be positive");
        }
        if self.max_depth == 0 {
            return bad("maximal depth must be positive");
        }
        if self.flops_budget == 0 || self.params_budget == Some(0) {
            return bad("budgets must be positive");
        }
        if self.resolution == 0 || self.resolution % OUTPUT_STRIDE != 0 {
            return bad("scoring resolution must be a positive multiple of 32");
        }
        if self.budget_resolution.area() == 0 {
            return bad("budget resolution must be positive");
        }
        if self.repeats == 0 {
            return bad("repeats must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.fine_keep == 0 {
            return bad("fine-phase survivors must be positive");
        }
        if self.block_types.is_empty() {
            return bad("block type whitelist is empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    Flops { flops: u64, budget: u64 },
    Params { params: u64, budget: u64 },
    Depth { depth: u64, max: usize },
    Invalid(ValidationError),
    Duplicate,
    Score(ScoreError),
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::Flops { .. } => "flops",
            RejectReason::Params { .. } => "params",
            RejectReason::Depth { .. } => "depth",
            RejectReason::Invalid(_) => "invalid",
            RejectReason::Duplicate => "duplicate",
            RejectReason::Score(e) if e.is_degenerate() => "degenerate",
            RejectReason::Score(_) => "score-error",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Flops { flops, budget } => write!(f, "flops {flops} exceed budget {budget}"),
            RejectReason::Params { params, budget } => write!(f, "params {params} exceed budget {budget}"),
            RejectReason::Depth { depth, max } => write!(f, "depth {depth} exceeds maximum {max}"),
            RejectReason::Invalid(e) => write!(f, "invalid: {e}"),
            RejectReason::Duplicate => f.write_str("already in population"),
            RejectReason::Score(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdmitDecision {
    Accepted { score: f64, cost: CostReport },
    Rejected(RejectReason),
}

/// Budget checks only; nothing is scored.
pub fn check_budget(candidate: &ArchitectureSpec, config: &SearchConfig) -> Result<CostReport, RejectReason> {
    candidate.validate().map_err(RejectReason::Invalid)?;
    let cost = cost_unchecked(candidate, config.budget_resolution);
    if cost.flops > config.flops_budget {
        return Err(RejectReason::Flops { flops: cost.flops, budget: config.flops_budget });
    }
    if let Some(budget) = config.params_budget {
        if cost.params > budget {
            return Err(RejectReason::Params { params: cost.params, budget });
        }
    }
    if cost.depth > config.max_depth as u64 {
        return Err(RejectReason::Depth { depth: cost.depth, max: config.max_depth });
    }
    Ok(cost)
}

/// Rejects over-budget candidates unscored, scores the rest.
pub fn admit(candidate: &ArchitectureSpec, config: &SearchConfig, scorer: &dyn Scorer) -> AdmitDecision {
    match check_budget(candidate, config) {
        Err(reason) => AdmitDecision::Rejected(reason),
        Ok(cost) => match scorer.score(candidate, config.seed, candidate.structural_hash()) {
            Ok(score) => AdmitDecision::Accepted { score, cost },
            Err(e) => AdmitDecision::Rejected(RejectReason::Score(e)),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub arch: ArchitectureSpec,
    pub score: f64,
    pub cost: CostReport,
    pub hash: u64,
    pub insertion: u64,
}

/// Scored candidates in insertion order, unique by structural hash.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Population {
    entries: Vec<Candidate>,
    next_insertion: u64,
}

impl Population {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_hash(&self, hash: u64) -> bool {
        self.entries.iter().any(|c| c.hash == hash)
    }

    /// Appends unless an identical architecture is present; returns whether it was added.
    pub fn insert(&mut self, arch: ArchitectureSpec, score: f64, cost: CostReport) -> bool {
        let hash = arch.structural_hash();
        if self.contains_hash(hash) {
            return false;
        }
        self.entries.push(Candidate { arch, score, cost, hash, insertion: self.next_insertion });
        self.next_insertion += 1;
        true
    }

    /// Highest score; the earliest insertion wins ties.
    pub fn best(&self) -> Option<&Candidate> {
        self.entries.iter().reduce(|best, c| if c.score > best.score { c } else { best })
    }

    pub fn max_score(&self) -> f64 {
        self.best().map_or(f64::NEG_INFINITY, |c| c.score)
    }

    /// Drops lowest scores until at most `cap` remain; among equal scores the
    /// earlier insertion survives. Survivors keep their order.
    pub fn truncate_to(&mut self, cap: usize) {
        if self.entries.len() <= cap {
            return;
        }
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| rank(&self.entries[a], &self.entries[b]));
        let mut keep = vec![false; self.entries.len()];
        for &i in &order[..cap] {
            keep[i] = true;
        }
        let mut i = 0;
        self.entries.retain(|_| {
            i += 1;
            keep[i - 1]
        });
    }
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score.total_cmp(&a.score).then(a.insertion.cmp(&b.insertion))
}

pub fn maintain(mut population: Population, cap: usize) -> Population {
    population.truncate_to(cap);
    population
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Coarse,
    Fine,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Coarse => "coarse",
            Phase::Fine => "fine",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// `cached` when the score was reused from an earlier evaluation.
    Accepted { score: f64, cached: bool },
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub parent_hash: u64,
    pub candidate_hash: u64,
    pub outcome: Outcome,
    pub population_size: usize,
    pub population_max: f64,
}

pub trait SearchObserver {
    fn on_iteration(&mut self, record: &IterationRecord, population: &Population);

    /// Called once when the search switches to fine mutation.
    fn on_phase_switch(&mut self, _before: &Population, _after: &Population) {}
}

pub struct NoopObserver;

impl SearchObserver for NoopObserver {
    fn on_iteration(&mut self, _: &IterationRecord, _: &Population) {}
}

impl<F: FnMut(&IterationRecord, &Population)> SearchObserver for F {
    fn on_iteration(&mut self, record: &IterationRecord, population: &Population) {
        self(record, population)
    }
}

pub struct ScoreJob<'a> {
    pub arch: &'a ArchitectureSpec,
    pub seed: u64,
    pub stream: u64,
}

/// Scores a batch of candidates. Implementations may run jobs concurrently
/// but must return results in job order.
pub trait Evaluator {
    fn evaluate(&self, scorer: &dyn Scorer, jobs: &[ScoreJob<'_>]) -> Vec<Result<f64, ScoreError>>;
}

pub struct Sequential;

impl Evaluator for Sequential {
    fn evaluate(&self, scorer: &dyn Scorer, jobs: &[ScoreJob<'_>]) -> Vec<Result<f64, ScoreError>> {
        jobs.iter().map(|j| scorer.score(j.arch, j.seed, j.stream)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_arch: ArchitectureSpec,
    pub best_score: f64,
    pub best_cost: CostReport,
    /// Population maximum after each iteration.
    pub score_trajectory: Vec<f64>,
    pub iterations_run: usize,
    pub initial_score: f64,
    pub population: Population,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchError {
    InvalidConfig(String),
    InitialInvalid(ValidationError),
    InitialOverBudget(RejectReason),
    InitialScore(ScoreError),
}

impl fmt::Display for SearchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchError::InvalidConfig(msg) => write!(f, "invalid search config: {msg}"),
            SearchError::InitialInvalid(e) => write!(f, "invalid initial architecture: {e}"),
            SearchError::InitialOverBudget(r) => write!(f, "initial architecture is over budget: {r}"),
            SearchError::InitialScore(e) => write!(f, "initial architecture cannot be scored: {e}"),
        }
    }
}

impl core::error::Error for SearchError {}

/// Search with the multi-scale entropy scorer, sequential evaluation and no observer.
pub fn search(config: &SearchConfig) -> Result<SearchResult, SearchError> {
    search_with(config, &config.scorer(), &Sequential, &mut NoopObserver)
}

const SEED_POPULATION_STREAM: u64 = 0x5eed;
const MUTATION_STREAM: u64 = 0xe501;

struct Pending {
    parent_hash: u64,
    arch: ArchitectureSpec,
    hash: u64,
    verdict: Verdict,
}

enum Verdict {
    Rejected(RejectReason),
    Cached(Result<f64, ScoreError>, CostReport),
    Scored(usize, CostReport),
}

pub fn search_with(
    config: &SearchConfig,
    scorer: &dyn Scorer,
    evaluator: &dyn Evaluator,
    observer: &mut dyn SearchObserver,
) -> Result<SearchResult, SearchError> {
    config.check()?;
    let initial = &config.initial_arch;
    initial.validate().map_err(SearchError::InitialInvalid)?;
    let initial_cost = check_budget(initial, config).map_err(SearchError::InitialOverBudget)?;
    let initial_hash = initial.structural_hash();
    let initial_score = scorer.score(initial, config.seed, initial_hash).map_err(SearchError::InitialScore)?;

    let space = config.space();
    let mut population = Population::new();
    population.insert(initial.clone(), initial_score, initial_cost);
    let mut cache: BTreeMap<u64, Result<f64, ScoreError>> = BTreeMap::new();
    cache.insert(initial_hash, Ok(initial_score));

    if config.seed_population {
        fill_population(config, scorer, evaluator, &space, &mut population, &mut cache);
    }

    let mut rng = SeededRng::new(config.seed, MUTATION_STREAM);
    let total = config.iterations;
    let half = total / 2;
    let batch = config.batch_size;
    let mut flag = MutationFlag::COARSE;
    let mut trajectory = Vec::with_capacity(total);
    let mut t = 1;

    while t <= total {
        if t == half && !flag.fine {
            let before = population.clone();
            population.truncate_to(config.fine_keep);
            flag = MutationFlag::FINE;
            observer.on_phase_switch(&before, &population);
        }
        let mut end = (t + batch - 1).min(total);
        if !flag.fine && t < half && half <= end {
            end = half - 1;
        }

        let mut pending = Vec::with_capacity(end - t + 1);
        let mut jobs_for = Vec::new();
        for _ in t..=end {
            let parent = &population.entries()[rng.below(population.len())];
            let arch = mutate(&parent.arch, &mut rng, flag, &space);
            let hash = arch.structural_hash();
            let duplicate = population.contains_hash(hash) || pending.iter().any(|p: &Pending| p.hash == hash);
            let verdict = if duplicate {
                Verdict::Rejected(RejectReason::Duplicate)
            } else {
                match check_budget(&arch, config) {
                    Err(reason) => Verdict::Rejected(reason),
                    Ok(cost) => match cache.get(&hash) {
                        Some(result) => Verdict::Cached(result.clone(), cost),
                        None => {
                            jobs_for.push(pending.len());
                            Verdict::Scored(jobs_for.len() - 1, cost)
                        }
                    },
                }
            };
            pending.push(Pending { parent_hash: parent.hash, arch, hash, verdict });
        }

        let jobs: Vec<ScoreJob<'_>> = jobs_for
            .iter()
            .map(|&i| ScoreJob { arch: &pending[i].arch, seed: config.seed, stream: pending[i].hash })
            .collect();
        let results = if jobs.is_empty() { Vec::new() } else { evaluator.evaluate(scorer, &jobs) };
        drop(jobs);

        for (offset, p) in pending.into_iter().enumerate() {
            let (result, cached, cost) = match p.verdict {
                Verdict::Rejected(reason) => (Err(reason), false, CostReport::default()),
                Verdict::Cached(r, cost) => (r.map_err(RejectReason::Score), true, cost),
                Verdict::Scored(j, cost) => {
                    let r = results[j].clone();
                    cache.insert(p.hash, r.clone());
                    (r.map_err(RejectReason::Score), false, cost)
                }
            };
            let outcome = match result {
                Ok(score) => {
                    if population.insert(p.arch, score, cost) {
                        Outcome::Accepted { score, cached }
                    } else {
                        Outcome::Rejected(RejectReason::Duplicate)
                    }
                }
                Err(reason) => Outcome::Rejected(reason),
            };
            population.truncate_to(config.population_size);
            let record = IterationRecord {
                iteration: t + offset,
                phase: if flag.fine { Phase::Fine } else { Phase::Coarse },
                parent_hash: p.parent_hash,
                candidate_hash: p.hash,
                outcome,
                population_size: population.len(),
                population_max: population.max_score(),
            };
            trajectory.push(record.population_max);
            observer.on_iteration(&record, &population);
        }
        t = end + 1;
    }

    let best = population.best().expect("population is never empty").clone();
    Ok(SearchResult {
        best_arch: best.arch,
        best_score: best.score,
        best_cost: best.cost,
        score_trajectory: trajectory,
        iterations_run: total,
        initial_score,
        population,
    })
}

fn fill_population(
    config: &SearchConfig,
    scorer: &dyn Scorer,
    evaluator: &dyn Evaluator,
    space: &SearchSpace,
    population: &mut Population,
    cache: &mut BTreeMap<u64, Result<f64, ScoreError>>,
) {
    let mut rng = SeededRng::new(config.seed, SEED_POPULATION_STREAM);
    let mut attempts = 0;
    while population.len() < config.population_size && attempts < 20 * config.population_size {
        attempts += 1;
        let arch = mutate(&config.initial_arch, &mut rng, MutationFlag::COARSE, space);
        let hash = arch.structural_hash();
        if cache.contains_key(&hash) {
            continue;
        }
        let Ok(cost) = check_budget(&arch, config) else { continue };
        let job = [ScoreJob { arch: &arch, seed: config.seed, stream: hash }];
        let result = evaluator.evaluate(scorer, &job).remove(0);
        cache.insert(hash, result.clone());
        if let Ok(score) = result {
            population.insert(arch, score, cost);
        }
    }
}

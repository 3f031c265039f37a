//! The evolutionary loop: ramped half-and-half initialization, tournament
//! selection, subtree crossover and mutation, static height-limit
//! enforcement, early stopping, and hall-of-fame/run logging.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exprtree::{quantize_constant, ExpressionTree, FeatureTable, Node, Op};
use crate::fitness::FitnessRecord;

/// All GP and fitness hyperparameters for one construction run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub height_limit: usize,
    pub init_depth_range: [usize; 2],
    pub mutation_subtree_depth_range: [usize; 2],
    pub constant_range: [f64; 2],
    pub lambda: f64,
    /// Number of construction iterations (features to evolve).
    pub m_iterations: usize,
    pub stagnation_generations: usize,
    pub convergence_variance_threshold: f64,
    pub convergence_window: usize,
    pub seed: u64,
    pub hall_of_fame_size: usize,
    /// Reserved: allow previously accepted composites as terminals in later
    /// iterations. Off by default; terminals stay base features only.
    pub composites_as_terminals: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            population_size: 100,
            max_generations: 50,
            crossover_rate: 0.8,
            mutation_rate: 0.1,
            tournament_size: 3,
            height_limit: 6,
            init_depth_range: [1, 3],
            mutation_subtree_depth_range: [0, 2],
            constant_range: [-2.0, 2.0],
            lambda: 0.01,
            m_iterations: 5,
            stagnation_generations: 15,
            convergence_variance_threshold: 1e-4,
            convergence_window: 5,
            seed: 0,
            hall_of_fame_size: 500,
            composites_as_terminals: false,
        }
    }
}

impl EvolutionConfig {
    /// The paper-scale preset with a 500-individual population.
    pub fn large_population() -> Self {
        EvolutionConfig {
            population_size: 500,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("population_size must be at least 2".into()));
        }
        for (name, rate) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must be in [0, 1]")));
            }
        }
        if self.tournament_size == 0 || self.hall_of_fame_size == 0 || self.m_iterations == 0 {
            return Err(Error::Config(
                "tournament_size, hall_of_fame_size, and m_iterations must be positive".into(),
            ));
        }
        if self.init_depth_range[0] > self.init_depth_range[1]
            || self.init_depth_range[1] > self.height_limit
        {
            return Err(Error::Config(
                "init_depth_range must be ordered and within the height limit".into(),
            ));
        }
        if self.mutation_subtree_depth_range[0] > self.mutation_subtree_depth_range[1] {
            return Err(Error::Config("mutation_subtree_depth_range must be ordered".into()));
        }
        if self.constant_range[0] > self.constant_range[1] {
            return Err(Error::Config("constant_range must be ordered".into()));
        }
        Ok(())
    }
}

/// One candidate composite feature in the population.
#[derive(Debug, Clone)]
pub struct Individual {
    pub tree: ExpressionTree,
    pub fitness: Option<FitnessRecord>,
    /// Global evaluation counter at creation time.
    pub birth_evaluation: u64,
}

impl Individual {
    pub fn new(tree: ExpressionTree, birth_evaluation: u64) -> Self {
        Individual {
            tree,
            fitness: None,
            birth_evaluation,
        }
    }
}

/// Better-individual ordering: higher fitness, then fewer nodes, then
/// earlier birth.
fn individual_cmp(a: &Individual, b: &Individual) -> Ordering {
    let fa = a.fitness.as_ref().expect("fitness set").fitness;
    let fb = b.fitness.as_ref().expect("fitness set").fitness;
    fb.total_cmp(&fa)
        .then(a.tree.node_count().cmp(&b.tree.node_count()))
        .then(a.birth_evaluation.cmp(&b.birth_evaluation))
}

/// Independent, seed-derived RNG streams for one run, so each operator's
/// draws never perturb the others.
pub struct RngStreams {
    pub init: ChaCha8Rng,
    pub selection: ChaCha8Rng,
    pub crossover: ChaCha8Rng,
    pub mutation: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64, iteration: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(iteration * 8 + k);
            rng
        };
        RngStreams {
            init: stream(0),
            selection: stream(1),
            crossover: stream(2),
            mutation: stream(3),
        }
    }
}

/// Random tree construction over a fixed terminal set.
pub struct TreeGenerator<'a> {
    table: &'a FeatureTable,
    constant_range: [f64; 2],
}

impl<'a> TreeGenerator<'a> {
    pub fn new(table: &'a FeatureTable, constant_range: [f64; 2]) -> Self {
        TreeGenerator {
            table,
            constant_range,
        }
    }

    /// Uniform over base features plus one ephemeral-constant slot.
    fn terminal(&self, rng: &mut ChaCha8Rng) -> Node {
        let k = rng.random_range(0..=self.table.len());
        if k == self.table.len() {
            let [lo, hi] = self.constant_range;
            Node::Const(quantize_constant(rng.random_range(lo..=hi)))
        } else {
            self.table.leaf(k)
        }
    }

    fn operator(&self, rng: &mut ChaCha8Rng) -> Op {
        Op::ALL[rng.random_range(0..Op::ALL.len())]
    }

    /// Every leaf at exactly `depth`.
    pub fn full(&self, depth: usize, rng: &mut ChaCha8Rng) -> Node {
        if depth == 0 {
            return self.terminal(rng);
        }
        let op = self.operator(rng);
        let children = (0..op.arity()).map(|_| self.full(depth - 1, rng)).collect();
        Node::Op { op, children }
    }

    /// Leaves may appear at any depth below the root; the root is an
    /// operator whenever `depth >= 1` so the tree reaches at least depth 1.
    pub fn grow(&self, depth: usize, rng: &mut ChaCha8Rng) -> Node {
        self.grow_node(depth, true, rng)
    }

    fn grow_node(&self, depth: usize, at_root: bool, rng: &mut ChaCha8Rng) -> Node {
        if depth == 0 || (!at_root && rng.random_range(0..2) == 0) {
            return self.terminal(rng);
        }
        let op = self.operator(rng);
        let children = (0..op.arity())
            .map(|_| self.grow_node(depth - 1, false, rng))
            .collect();
        Node::Op { op, children }
    }
}

/// Ramped half-and-half: full/grow alternate, target depth uniform over the
/// configured range.
pub fn init_population(
    config: &EvolutionConfig,
    table: &FeatureTable,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Individual>> {
    if table.is_empty() {
        return Err(Error::Config("empty feature set".into()));
    }
    let generator = TreeGenerator::new(table, config.constant_range);
    let [lo, hi] = config.init_depth_range;
    let mut population = Vec::with_capacity(config.population_size);
    for i in 0..config.population_size {
        let depth = rng.random_range(lo..=hi);
        let root = if i % 2 == 0 {
            generator.full(depth, rng)
        } else {
            generator.grow(depth, rng)
        };
        population.push(Individual::new(ExpressionTree::new(root), 0));
    }
    Ok(population)
}

/// Size-`tournament_size` tournament, sampled with replacement.
pub fn tournament_select<'a>(
    population: &'a [Individual],
    config: &EvolutionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<&'a Individual> {
    if population.iter().any(|ind| ind.fitness.is_none()) {
        return Err(Error::Config(
            "tournament over unevaluated individuals".into(),
        ));
    }
    let mut best = &population[rng.random_range(0..population.len())];
    for _ in 1..config.tournament_size {
        let contender = &population[rng.random_range(0..population.len())];
        if individual_cmp(contender, best) == Ordering::Less {
            best = contender;
        }
    }
    Ok(best)
}

fn nth_subtree(node: &Node, target: usize) -> &Node {
    fn walk<'a>(node: &'a Node, counter: &mut usize, target: usize) -> Option<&'a Node> {
        if *counter == target {
            return Some(node);
        }
        *counter += 1;
        if let Node::Op { children, .. } = node {
            for child in children {
                if let Some(found) = walk(child, counter, target) {
                    return Some(found);
                }
            }
        }
        None
    }
    walk(node, &mut 0, target).expect("subtree index in range")
}

fn replace_nth(node: &Node, counter: &mut usize, target: usize, replacement: &Node) -> Node {
    let here = *counter;
    *counter += 1;
    if here == target {
        return replacement.clone();
    }
    match node {
        Node::Op { op, children } => Node::Op {
            op: *op,
            children: children
                .iter()
                .map(|c| replace_nth(c, counter, target, replacement))
                .collect(),
        },
        other => other.clone(),
    }
}

/// One-point subtree crossover: a uniformly random node in each parent, the
/// rooted subtrees swapped.
pub fn subtree_crossover(
    a: &Individual,
    b: &Individual,
    rng: &mut ChaCha8Rng,
    birth: u64,
) -> (Individual, Individual) {
    let point_a = rng.random_range(0..a.tree.node_count());
    let point_b = rng.random_range(0..b.tree.node_count());
    let sub_a = nth_subtree(a.tree.root(), point_a);
    let sub_b = nth_subtree(b.tree.root(), point_b);
    let child_a = replace_nth(a.tree.root(), &mut 0, point_a, sub_b);
    let child_b = replace_nth(b.tree.root(), &mut 0, point_b, sub_a);
    (
        Individual::new(ExpressionTree::new(child_a), birth),
        Individual::new(ExpressionTree::new(child_b), birth),
    )
}

/// Uniform subtree mutation: a random node replaced by a fresh full tree of
/// depth drawn uniformly from the configured range.
pub fn subtree_mutate(
    a: &Individual,
    config: &EvolutionConfig,
    table: &FeatureTable,
    rng: &mut ChaCha8Rng,
    birth: u64,
) -> Individual {
    let generator = TreeGenerator::new(table, config.constant_range);
    let point = rng.random_range(0..a.tree.node_count());
    let [lo, hi] = config.mutation_subtree_depth_range;
    let depth = rng.random_range(lo..=hi);
    let replacement = generator.full(depth, rng);
    let root = replace_nth(a.tree.root(), &mut 0, point, &replacement);
    Individual::new(ExpressionTree::new(root), birth)
}

/// Keeps the child only if it respects the height limit; otherwise the
/// variation is rejected and the pre-variation parent survives.
pub fn enforce_height_limit(
    child: Individual,
    parent: &Individual,
    height_limit: usize,
) -> Individual {
    if child.tree.depth() <= height_limit {
        child
    } else {
        parent.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxGenerations,
    Stagnation,
    Convergence,
}

/// Stagnation (no strict best-so-far improvement for the configured number
/// of generations) is checked before convergence (population fitness
/// variance below threshold across the window).
pub fn check_early_stop(
    best_per_generation: &[f64],
    variance_per_generation: &[f64],
    config: &EvolutionConfig,
) -> Option<StopReason> {
    let n = best_per_generation.len();
    let s = config.stagnation_generations;
    if n > s {
        let early_best = best_per_generation[..n - s]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let overall_best = best_per_generation
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if overall_best <= early_best {
            return Some(StopReason::Stagnation);
        }
    }
    let w = config.convergence_window;
    if variance_per_generation.len() >= w
        && variance_per_generation[variance_per_generation.len() - w..]
            .iter()
            .all(|&v| v < config.convergence_variance_threshold)
    {
        return Some(StopReason::Convergence);
    }
    None
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalRecord {
    pub eval: u64,
    pub gen: usize,
    pub fitness: f64,
    pub raw_metric: f64,
    pub nodes: usize,
    pub depth: usize,
    pub expr: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HofEntry {
    pub expr: String,
    pub fitness: f64,
    pub raw_metric: f64,
    pub nodes: usize,
    pub eval: u64,
}

fn hof_cmp(a: &HofEntry, b: &HofEntry) -> Ordering {
    b.fitness
        .total_cmp(&a.fitness)
        .then(a.nodes.cmp(&b.nodes))
        .then(a.eval.cmp(&b.eval))
}

/// Best-K individuals seen in a run, deduplicated by canonical
/// serialization, sorted best-first.
#[derive(Debug, Clone)]
pub struct HallOfFame {
    capacity: usize,
    entries: Vec<HofEntry>,
    seen: HashSet<String>,
}

impl HallOfFame {
    pub fn new(capacity: usize) -> Self {
        HallOfFame {
            capacity,
            entries: Vec::new(),
            seen: HashSet::new(),
        }
    }

    pub fn insert(&mut self, entry: HofEntry) {
        if self.seen.contains(&entry.expr) {
            return;
        }
        let pos = self
            .entries
            .partition_point(|e| hof_cmp(e, &entry) != Ordering::Greater);
        if pos >= self.capacity {
            return;
        }
        self.seen.insert(entry.expr.clone());
        self.entries.insert(pos, entry);
        if self.entries.len() > self.capacity {
            let evicted = self.entries.pop().expect("nonempty");
            self.seen.remove(&evicted.expr);
        }
    }

    pub fn entries(&self) -> &[HofEntry] {
        &self.entries
    }

    pub fn best(&self) -> Option<&HofEntry> {
        self.entries.first()
    }
}

/// Complete log of one GP run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunLog {
    pub evaluations: Vec<EvalRecord>,
    pub hall_of_fame: Vec<HofEntry>,
    pub generations_completed: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    schema_version: u32,
    stop_reason: StopReason,
    generations_completed: usize,
    hall_of_fame: Vec<HofEntry>,
}

impl RunLog {
    /// JSON-lines: one record per evaluation, then a trailing summary.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for record in &self.evaluations {
            serde_json::to_writer(&mut w, record)?;
            writeln!(w)?;
        }
        let summary = RunSummary {
            schema_version: 1,
            stop_reason: self.stop_reason,
            generations_completed: self.generations_completed,
            hall_of_fame: self.hall_of_fame.clone(),
        };
        serde_json::to_writer(&mut w, &summary)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<RunLog> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let reader = std::io::BufReader::new(file);
        let mut evaluations = Vec::new();
        let mut summary: Option<RunSummary> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::RunLog {
                path: path.display().to_string(),
                line: i + 1,
                message,
            };
            if summary.is_some() {
                return Err(err("records after summary line".into()));
            }
            if line.contains("\"stop_reason\"") {
                summary = Some(
                    serde_json::from_str(&line).map_err(|e| err(format!("bad summary: {e}")))?,
                );
            } else {
                evaluations.push(
                    serde_json::from_str(&line)
                        .map_err(|e| err(format!("bad evaluation record: {e}")))?,
                );
            }
        }
        let summary = summary.ok_or_else(|| Error::RunLog {
            path: path.display().to_string(),
            line: 0,
            message: "missing summary record".into(),
        })?;
        Ok(RunLog {
            evaluations,
            hall_of_fame: summary.hall_of_fame,
            generations_completed: summary.generations_completed,
            stop_reason: summary.stop_reason,
        })
    }
}

/// Evaluates every individual without a fitness record, in parallel, then
/// assigns evaluation indices and log entries in population order so the
/// outcome is independent of scheduling.
fn evaluate_population<F>(
    population: &mut [Individual],
    fitness: &F,
    generation: usize,
    eval_counter: &mut u64,
    log: &mut Vec<EvalRecord>,
    hof: &mut HallOfFame,
) -> Result<()>
where
    F: Fn(&ExpressionTree) -> Result<FitnessRecord> + Sync,
{
    let pending: Vec<usize> = population
        .iter()
        .enumerate()
        .filter(|(_, ind)| ind.fitness.is_none())
        .map(|(i, _)| i)
        .collect();
    let results: Vec<(usize, Result<FitnessRecord>)> = pending
        .par_iter()
        .map(|&i| (i, fitness(&population[i].tree)))
        .collect();
    for (i, result) in results {
        let record = result.map_err(|e| Error::Fitness {
            expr: population[i].tree.serialize(),
            generation,
            message: e.to_string(),
        })?;
        *eval_counter += 1;
        let expr = population[i].tree.serialize();
        log.push(EvalRecord {
            eval: *eval_counter,
            gen: generation,
            fitness: record.fitness,
            raw_metric: record.raw_metric,
            nodes: population[i].tree.node_count(),
            depth: population[i].tree.depth(),
            expr: expr.clone(),
        });
        hof.insert(HofEntry {
            expr,
            fitness: record.fitness,
            raw_metric: record.raw_metric,
            nodes: record.node_count,
            eval: *eval_counter,
        });
        population[i].fitness = Some(record);
    }
    Ok(())
}

fn generation_stats(population: &[Individual]) -> (f64, f64) {
    let fits: Vec<f64> = population
        .iter()
        .map(|ind| ind.fitness.as_ref().expect("evaluated").fitness)
        .collect();
    let best = fits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = fits.iter().sum::<f64>() / fits.len() as f64;
    let var = fits.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / fits.len() as f64;
    (best, var)
}

/// Runs one full GP search. `iteration` selects the RNG stream block so
/// successive construction iterations are independent.
pub fn evolve_one_run<F>(
    config: &EvolutionConfig,
    table: &FeatureTable,
    fitness: &F,
    iteration: u64,
) -> Result<RunLog>
where
    F: Fn(&ExpressionTree) -> Result<FitnessRecord> + Sync,
{
    config.validate()?;
    let mut streams = RngStreams::new(config.seed, iteration);
    let generator_table = table;

    let mut eval_counter = 0u64;
    let mut log = Vec::new();
    let mut hof = HallOfFame::new(config.hall_of_fame_size);
    let mut best_per_gen = Vec::new();
    let mut var_per_gen = Vec::new();

    let mut population = init_population(config, generator_table, &mut streams.init)?;
    evaluate_population(
        &mut population,
        fitness,
        0,
        &mut eval_counter,
        &mut log,
        &mut hof,
    )?;
    let (best, var) = generation_stats(&population);
    best_per_gen.push(best);
    var_per_gen.push(var);

    let mut stop_reason = StopReason::MaxGenerations;
    let mut generations_completed = 0;

    for gen in 1..=config.max_generations {
        if let Some(reason) = check_early_stop(&best_per_gen, &var_per_gen, config) {
            stop_reason = reason;
            break;
        }

        let mut parents: Vec<Individual> = Vec::with_capacity(config.population_size);
        for _ in 0..config.population_size {
            parents.push(tournament_select(&population, config, &mut streams.selection)?.clone());
        }
        for i in (1..parents.len()).rev() {
            let j = streams.crossover.random_range(0..=i);
            parents.swap(i, j);
        }

        let mut children: Vec<Individual> = Vec::with_capacity(config.population_size);
        let mut pairs = parents.chunks_exact(2);
        for pair in &mut pairs {
            if streams.crossover.random::<f64>() < config.crossover_rate {
                let (c1, c2) =
                    subtree_crossover(&pair[0], &pair[1], &mut streams.crossover, eval_counter);
                children.push(enforce_height_limit(c1, &pair[0], config.height_limit));
                children.push(enforce_height_limit(c2, &pair[1], config.height_limit));
            } else {
                children.push(pair[0].clone());
                children.push(pair[1].clone());
            }
        }
        children.extend(pairs.remainder().iter().cloned());

        for child in children.iter_mut() {
            if streams.mutation.random::<f64>() < config.mutation_rate {
                let mutated = subtree_mutate(
                    child,
                    config,
                    generator_table,
                    &mut streams.mutation,
                    eval_counter,
                );
                *child = enforce_height_limit(mutated, child, config.height_limit);
            }
        }

        population = children;
        evaluate_population(
            &mut population,
            fitness,
            gen,
            &mut eval_counter,
            &mut log,
            &mut hof,
        )?;
        let (best, var) = generation_stats(&population);
        best_per_gen.push(best);
        var_per_gen.push(var);
        generations_completed = gen;
    }

    Ok(RunLog {
        evaluations: log,
        hall_of_fame: hof.entries().to_vec(),
        generations_completed,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprtree::parse;

    fn table() -> FeatureTable {
        FeatureTable::new(&["x0", "x1", "x2", "x3"]).unwrap()
    }

    fn stub_record(tree: &ExpressionTree, raw: f64) -> FitnessRecord {
        FitnessRecord {
            fitness: raw - 0.01 * tree.node_count() as f64,
            raw_metric: raw,
            node_count: tree.node_count(),
            had_non_finite: false,
        }
    }

    /// Deterministic pseudo-metric from the serialized form; creates
    /// selection pressure without a classifier.
    fn hash_fitness(tree: &ExpressionTree) -> Result<FitnessRecord> {
        let s = tree.serialize();
        let mut h: u64 = 0xcbf29ce484222325;
        for b in s.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
        Ok(stub_record(tree, (h % 10_000) as f64 / 10_000.0))
    }

    #[test]
    fn init_population_depths_in_range() {
        let cfg = EvolutionConfig::default();
        let ft = table();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pop = init_population(&cfg, &ft, &mut rng).unwrap();
        assert_eq!(pop.len(), 100);
        for ind in &pop {
            let d = ind.tree.depth();
            assert!((1..=3).contains(&d), "depth {d}");
        }
    }

    #[test]
    fn full_tree_depth_exact() {
        let ft = table();
        let generator = TreeGenerator::new(&ft, [-2.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for depth in 0..4 {
            for _ in 0..50 {
                let node = generator.full(depth, &mut rng);
                assert_eq!(node.depth(), depth);
            }
        }
    }

    #[test]
    fn init_target_depth_distribution() {
        let cfg = EvolutionConfig {
            population_size: 2,
            ..Default::default()
        };
        let ft = table();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Full trees hit their target depth exactly; count those.
        let mut counts = [0usize; 4];
        let trials = 10_000;
        for _ in 0..trials {
            let pop = init_population(&cfg, &ft, &mut rng).unwrap();
            counts[pop[0].tree.depth()] += 1;
        }
        for d in 1..=3 {
            let freq = counts[d] as f64 / trials as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "depth {d} freq {freq}");
        }
    }

    #[test]
    fn tournament_prefers_best_then_smaller_then_earlier() {
        let ft = table();
        let cfg = EvolutionConfig {
            tournament_size: 50,
            ..Default::default()
        };
        let mk = |expr: &str, fitness: f64, birth: u64| {
            let tree = parse(expr, &ft).unwrap();
            let nodes = tree.node_count();
            Individual {
                tree,
                fitness: Some(FitnessRecord {
                    fitness,
                    raw_metric: fitness,
                    node_count: nodes,
                    had_non_finite: false,
                }),
                birth_evaluation: birth,
            }
        };
        let pop = vec![
            mk("(add x0 (add x1 (add x2 x3)))", 0.5, 0),
            mk("(add x0 x1)", 0.5, 1),
            mk("x2", 0.2, 2),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // With a tournament of 50 over 3 individuals, all are drawn w.h.p.
        let winner = tournament_select(&pop, &cfg, &mut rng).unwrap();
        assert_eq!(winner.tree.serialize(), "(add x0 x1)");

        let single = vec![mk("x0", 0.1, 0)];
        let winner = tournament_select(&single, &cfg, &mut rng).unwrap();
        assert_eq!(winner.tree.serialize(), "x0");
    }

    #[test]
    fn tournament_requires_fitness() {
        let ft = table();
        let cfg = EvolutionConfig::default();
        let pop = vec![Individual::new(parse("x0", &ft).unwrap(), 0)];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(tournament_select(&pop, &cfg, &mut rng).is_err());
    }

    #[test]
    fn crossover_of_single_leaves_swaps() {
        let ft = table();
        let a = Individual::new(parse("x0", &ft).unwrap(), 0);
        let b = Individual::new(parse("x1", &ft).unwrap(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (c1, c2) = subtree_crossover(&a, &b, &mut rng, 0);
        assert_eq!(c1.tree.serialize(), "x1");
        assert_eq!(c2.tree.serialize(), "x0");
        assert!(c1.fitness.is_none());
    }

    #[test]
    fn crossover_point_uniformity() {
        let ft = table();
        // 7-node parent; the other parent is a single marker constant, so
        // the child reveals exactly which node was chosen.
        let a = Individual::new(parse("(add x0 (mul x1 (add x2 x3)))", &ft).unwrap(), 0);
        let b = Individual::new(parse("9.875", &ft).unwrap(), 0);
        let expected: Vec<String> = (0..7)
            .map(|point| {
                let child = replace_nth(a.tree.root(), &mut 0, point, b.tree.root());
                ExpressionTree::new(child).serialize()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 7];
        let trials = 10_000;
        for _ in 0..trials {
            let (c1, _) = subtree_crossover(&a, &b, &mut rng, 0);
            let s = c1.tree.serialize();
            let point = expected.iter().position(|e| e == &s).expect("known child");
            counts[point] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / trials as f64;
            assert!((freq - 1.0 / 7.0).abs() < 0.02, "node {i} freq {freq}");
        }
    }

    #[test]
    fn crossover_swaps_chosen_subtrees() {
        let ft = table();
        // f1 = add(x0, x1), crossover at the x1 node (preorder index 2)
        // with f2 = mul(x2, 2) at the root (index 0).
        let f1 = parse("(add x0 x1)", &ft).unwrap();
        let f2 = parse("(mul x2 2)", &ft).unwrap();
        let child = replace_nth(f1.root(), &mut 0, 2, f2.root());
        assert_eq!(
            ExpressionTree::new(child).serialize(),
            "(add x0 (mul x2 2))"
        );
    }

    #[test]
    fn mutation_replacement_depth_bounds_and_distribution() {
        let ft = table();
        let cfg = EvolutionConfig::default();
        let leaf = Individual::new(parse("x0", &ft).unwrap(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut depth_counts = [0usize; 3];
        let trials = 10_000;
        for _ in 0..trials {
            let m = subtree_mutate(&leaf, &cfg, &ft, &mut rng, 0);
            let d = m.tree.depth();
            assert!(d <= 2);
            depth_counts[d] += 1;
            assert!(m.fitness.is_none());
        }
        for (d, &c) in depth_counts.iter().enumerate() {
            let freq = c as f64 / trials as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "depth {d} freq {freq}");
        }
    }

    #[test]
    fn height_limit_enforcement() {
        let ft = table();
        let parent = Individual::new(parse("x0", &ft).unwrap(), 0);
        let shallow = Individual::new(parse("(add x0 x1)", &ft).unwrap(), 1);
        let kept = enforce_height_limit(shallow.clone(), &parent, 6);
        assert_eq!(kept.tree.serialize(), shallow.tree.serialize());

        let mut deep = "x0".to_string();
        for _ in 0..7 {
            deep = format!("(neg {deep})");
        }
        let deep = Individual::new(parse(&deep, &ft).unwrap(), 1);
        let rejected = enforce_height_limit(deep, &parent, 6);
        assert_eq!(rejected.tree.serialize(), "x0");
    }

    #[test]
    fn early_stop_rules() {
        let cfg = EvolutionConfig::default();
        let rising: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let vars = vec![1.0; 30];
        assert_eq!(check_early_stop(&rising, &vars, &cfg), None);

        // Best flat for exactly 15 generations after the initial one.
        let mut flat = vec![0.5];
        let mut flat_vars = vec![1.0];
        for i in 0..15 {
            flat.push(0.5);
            flat_vars.push(1.0);
            let expected = if i == 14 {
                Some(StopReason::Stagnation)
            } else {
                None
            };
            assert_eq!(
                check_early_stop(&flat, &flat_vars, &cfg),
                expected,
                "at flat generation {}",
                i + 1
            );
        }

        let best = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        let zero_vars = vec![0.0; 5];
        assert_eq!(
            check_early_stop(&best, &zero_vars, &cfg),
            Some(StopReason::Convergence)
        );
    }

    #[test]
    fn hall_of_fame_dedup_and_order() {
        let mut hof = HallOfFame::new(3);
        let entry = |expr: &str, fitness: f64, nodes: usize, eval: u64| HofEntry {
            expr: expr.into(),
            fitness,
            raw_metric: fitness,
            nodes,
            eval,
        };
        hof.insert(entry("a", 0.5, 3, 1));
        hof.insert(entry("a", 0.5, 3, 2));
        hof.insert(entry("b", 0.7, 5, 3));
        hof.insert(entry("c", 0.7, 2, 4));
        hof.insert(entry("d", 0.1, 1, 5));
        hof.insert(entry("e", 0.9, 9, 6));
        let exprs: Vec<&str> = hof.entries().iter().map(|e| e.expr.as_str()).collect();
        // e best; ties between b and c broken by fewer nodes.
        assert_eq!(exprs, vec!["e", "c", "b"]);
        // Evicted entries can re-enter later.
        hof.insert(entry("a", 0.95, 3, 7));
        assert_eq!(hof.best().unwrap().expr, "a");
    }

    #[test]
    fn zero_generation_run_logs_initial_population_only() {
        let ft = table();
        let cfg = EvolutionConfig {
            max_generations: 0,
            population_size: 20,
            seed: 9,
            ..Default::default()
        };
        let log = evolve_one_run(&cfg, &ft, &hash_fitness, 0).unwrap();
        assert_eq!(log.evaluations.len(), 20);
        assert_eq!(log.generations_completed, 0);
        assert_eq!(log.stop_reason, StopReason::MaxGenerations);
    }

    #[test]
    fn constant_fitness_stops_by_convergence() {
        let ft = table();
        let cfg = EvolutionConfig {
            population_size: 20,
            seed: 10,
            ..Default::default()
        };
        let constant = |tree: &ExpressionTree| {
            Ok(FitnessRecord {
                fitness: 0.5,
                raw_metric: 0.5,
                node_count: tree.node_count(),
                had_non_finite: false,
            })
        };
        let log = evolve_one_run(&cfg, &ft, &constant, 0).unwrap();
        assert_eq!(log.stop_reason, StopReason::Convergence);
    }

    #[test]
    fn fixed_seed_runs_are_identical(){
        let ft = table();
        let cfg = EvolutionConfig {
            population_size: 30,
            max_generations: 8,
            seed: 11,
            ..Default::default()
        };
        let a = evolve_one_run(&cfg, &ft, &hash_fitness, 0).unwrap();
        let b = evolve_one_run(&cfg, &ft, &hash_fitness, 0).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_jsonl(&mut buf_a).unwrap();
        b.write_jsonl(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn best_so_far_non_decreasing_and_depth_bounded() {
        let ft = table();
        let cfg = EvolutionConfig {
            population_size: 40,
            max_generations: 12,
            seed: 12,
            ..Default::default()
        };
        let log = evolve_one_run(&cfg, &ft, &hash_fitness, 0).unwrap();
        let mut best = f64::NEG_INFINITY;
        let mut prev_eval = 0;
        for record in &log.evaluations {
            assert!(record.eval > prev_eval);
            prev_eval = record.eval;
            assert!(record.depth <= 6);
            best = best.max(record.fitness);
        }
        assert_eq!(log.hall_of_fame[0].fitness, best);
        let exprs: HashSet<&str> = log
            .hall_of_fame
            .iter()
            .map(|e| e.expr.as_str())
            .collect();
        assert_eq!(exprs.len(), log.hall_of_fame.len());
    }

    #[test]
    fn selection_only_drift_introduces_no_new_trees() {
        let ft = table();
        let cfg = EvolutionConfig {
            population_size: 30,
            max_generations: 10,
            crossover_rate: 0.0,
            mutation_rate: 0.0,
            convergence_variance_threshold: 0.0,
            seed: 13,
            ..Default::default()
        };
        let log = evolve_one_run(&cfg, &ft, &hash_fitness, 0).unwrap();
        let initial: HashSet<&str> = log
            .evaluations
            .iter()
            .filter(|r| r.gen == 0)
            .map(|r| r.expr.as_str())
            .collect();
        for record in &log.evaluations {
            assert!(
                initial.contains(record.expr.as_str()),
                "tree {} absent from initial population",
                record.expr
            );
        }
    }

    #[test]
    fn run_log_round_trips_through_jsonl() {
        let ft = table();
        let cfg = EvolutionConfig {
            population_size: 10,
            max_generations: 3,
            seed: 14,
            ..Default::default()
        };
        let log = evolve_one_run(&cfg, &ft, &hash_fitness, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        log.save(&path).unwrap();
        let back = RunLog::load(&path).unwrap();
        assert_eq!(log, back);
    }
}

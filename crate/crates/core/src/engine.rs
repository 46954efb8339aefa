//! Multifactorial evolutionary loop over a unified chromosome population.

use crate::datagen::Dataset;
use crate::exprcalc::ExprTree;
use crate::fitness::{factorial_cost, FitnessConfig, SENTINEL_COST};
use crate::genome::{decode, random_chromosome, Chromosome, EncodingSpec, GenomeError};
use crate::pdefam::{ConditionSet, TaskSpec};
use crate::transfer::{transfer_event, TransferConfig, TransferNet, TransferReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("no tasks given")]
    NoTasks,
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub pop_size: usize,
    pub rmp: f64,
    pub mutation_prob: f64,
    pub generations: usize,
    pub max_evals: usize,
    pub transfer_interval: usize,
    pub de_scale: f64,
    pub de_crossover: f64,
    pub master_seed: u64,
    pub transfer_enabled: bool,
    /// Worker threads for evaluation; 0 uses every available core.
    pub workers: usize,
    pub head_len: usize,
    pub num_adfs: usize,
    pub num_adf_args: usize,
    pub fitness: FitnessConfig,
    pub transfer: TransferConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            pop_size: 50,
            rmp: 0.2,
            mutation_prob: 0.002,
            generations: 100,
            max_evals: 5000,
            transfer_interval: 10,
            de_scale: 0.5,
            de_crossover: 0.5,
            master_seed: 0,
            transfer_enabled: true,
            workers: 0,
            head_len: 10,
            num_adfs: 1,
            num_adf_args: 2,
            fitness: FitnessConfig::default(),
            transfer: TransferConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let fail = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.pop_size < 4 || self.pop_size % 2 != 0 {
            return fail("pop_size must be even and at least 4");
        }
        if !(0.0..=1.0).contains(&self.rmp) {
            return fail("rmp must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return fail("mutation_prob must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.de_crossover) {
            return fail("de_crossover must lie in [0, 1]");
        }
        if !self.de_scale.is_finite() {
            return fail("de_scale must be finite");
        }
        if self.transfer_interval == 0 {
            return fail("transfer_interval must be at least 1");
        }
        if self.head_len == 0 {
            return fail("head_len must be at least 1");
        }
        if self.num_adfs > 0 && self.num_adf_args == 0 {
            return fail("ADFs need at least one argument");
        }
        if !(self.fitness.lambda_phys >= 0.0) {
            return fail("lambda_phys must be non-negative");
        }
        if !(self.fitness.const_opt.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        Ok(())
    }
}

/// A task together with its training data and collocation points.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub task: TaskSpec,
    pub data: Dataset,
    pub cond: ConditionSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub chromosome: Chromosome,
    /// Factorial cost per task; `None` where not evaluated.
    pub costs: Vec<Option<f64>>,
    /// Constant-tuned tree per evaluated task.
    pub trees: Vec<Option<ExprTree>>,
    pub skill_factor: usize,
    pub scalar_fitness: f64,
}

impl Individual {
    pub fn unevaluated(chromosome: Chromosome, num_tasks: usize) -> Self {
        Self {
            chromosome,
            costs: vec![None; num_tasks],
            trees: vec![None; num_tasks],
            skill_factor: 0,
            scalar_fitness: 0.0,
        }
    }
}

/// Factorial ranks, `ranks[task][individual]`, 1-based. Ties go to the lower
/// index; individuals without a cost on a task share rank `n + 1`.
pub fn compute_ranks(costs: &[Vec<Option<f64>>]) -> Vec<Vec<usize>> {
    costs
        .iter()
        .map(|row| {
            let n = row.len();
            let mut order: Vec<usize> = (0..n).filter(|&i| row[i].is_some()).collect();
            order.sort_by(|&a, &b| row[a].unwrap().total_cmp(&row[b].unwrap()).then(a.cmp(&b)));
            let mut ranks = vec![n + 1; n];
            for (r, &i) in order.iter().enumerate() {
                ranks[i] = r + 1;
            }
            ranks
        })
        .collect()
}

/// Skill factor (best-ranked task, ties to the lower task) and scalar fitness
/// of individual `i`.
pub fn scalar_fitness(ranks: &[Vec<usize>], i: usize) -> (usize, f64) {
    let mut best = 0;
    for k in 1..ranks.len() {
        if ranks[k][i] < ranks[best][i] {
            best = k;
        }
    }
    (best, 1.0 / ranks[best][i] as f64)
}

fn cost_matrix(pop: &[Individual], num_tasks: usize) -> Vec<Vec<Option<f64>>> {
    (0..num_tasks)
        .map(|k| pop.iter().map(|ind| ind.costs[k]).collect())
        .collect()
}

/// Recomputes ranks, skill factors and scalar fitness in place.
pub fn update_ranks(pop: &mut [Individual], num_tasks: usize) {
    let ranks = compute_ranks(&cost_matrix(pop, num_tasks));
    for (i, ind) in pop.iter_mut().enumerate() {
        let (tau, phi) = scalar_fitness(&ranks, i);
        ind.skill_factor = tau;
        ind.scalar_fitness = phi;
    }
}

/// An individual is redundant when a lower-indexed one has the same genes.
pub fn redundant_flags(pop: &[Individual]) -> Vec<bool> {
    let mut seen = std::collections::HashSet::new();
    pop.iter().map(|ind| !seen.insert(&ind.chromosome.genes)).collect()
}

/// The offspring replaces the parent when it has strictly higher scalar
/// fitness or the parent is redundant.
pub fn one_to_one_select(parent: Individual, offspring: Individual, redundant: bool) -> Individual {
    if offspring.scalar_fitness > parent.scalar_fitness || redundant {
        offspring
    } else {
        parent
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Genetic,
    Differential,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Offspring {
    pub chromosome: Chromosome,
    pub skill_factor: usize,
    pub branch: Branch,
}

fn distinct_index<R: Rng + ?Sized>(n: usize, exclude: &[usize], rng: &mut R) -> usize {
    loop {
        let r = rng.random_range(0..n);
        if !exclude.contains(&r) {
            return r;
        }
    }
}

/// Index of the highest scalar fitness, ties to the lower index.
pub fn best_index(pop: &[Individual]) -> usize {
    let mut best = 0;
    for (i, ind) in pop.iter().enumerate() {
        if ind.scalar_fitness > pop[best].scalar_fitness {
            best = i;
        }
    }
    best
}

/// Builds one offspring for parent `i`. With probability `rmp` one-point
/// crossover with a random mate plus uniform mutation; otherwise a rounded
/// DE/best/1 mutant with binomial crossover.
pub fn reproduce<R: Rng + ?Sized>(
    i: usize,
    pop: &[Individual],
    best: usize,
    spec: &EncodingSpec,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Offspring {
    let n = pop.len();
    let parent = &pop[i].chromosome.genes;
    let len = parent.len();
    if rng.random::<f64>() < cfg.rmp {
        let r1 = distinct_index(n, &[i], rng);
        let mate = &pop[r1].chromosome.genes;
        let cut = rng.random_range(1..len.max(2));
        let mut genes: Vec<u32> = parent[..cut.min(len)].iter().chain(&mate[cut.min(len)..]).copied().collect();
        for (p, g) in genes.iter_mut().enumerate() {
            if rng.random::<f64>() < cfg.mutation_prob {
                let legal = spec.legal_genes(p);
                *g = legal[rng.random_range(0..legal.len())];
            }
        }
        let skill_factor = if rng.random::<bool>() {
            pop[i].skill_factor
        } else {
            pop[r1].skill_factor
        };
        Offspring {
            chromosome: Chromosome::new(genes),
            skill_factor,
            branch: Branch::Genetic,
        }
    } else {
        let r1 = distinct_index(n, &[i], rng);
        let r2 = distinct_index(n, &[i, r1], rng);
        let zb = &pop[best].chromosome.genes;
        let (a, b) = (&pop[r1].chromosome.genes, &pop[r2].chromosome.genes);
        let j_rand = rng.random_range(0..len);
        let genes = (0..len)
            .map(|p| {
                if rng.random::<f64>() < cfg.de_crossover || p == j_rand {
                    let m = zb[p] as f64 + cfg.de_scale * (a[p] as f64 - b[p] as f64);
                    spec.repair_gene(p, m.round() as i64)
                } else {
                    parent[p]
                }
            })
            .collect();
        Offspring {
            chromosome: Chromosome::new(genes),
            skill_factor: pop[i].skill_factor,
            branch: Branch::Differential,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent random stream for `(seed, generation, index, purpose)`.
pub fn stream_rng(seed: u64, generation: u64, index: u64, purpose: u64) -> ChaCha8Rng {
    let h = splitmix(splitmix(splitmix(splitmix(seed) ^ generation) ^ index) ^ purpose);
    ChaCha8Rng::seed_from_u64(h)
}

const INIT_STREAM: u64 = 1;
const REPRODUCE_STREAM: u64 = 2;
const TRANSFER_STREAM: u64 = 3;
const NET_STREAM: u64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub best_tree: Option<ExprTree>,
    pub best_chromosome: Option<Chromosome>,
    pub best_cost: f64,
    pub generation: usize,
    pub evaluations: usize,
}

/// Elitist per-task record of the best solution seen.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub entries: Vec<ArchiveEntry>,
}

impl Archive {
    fn new(num_tasks: usize) -> Self {
        Self {
            entries: (0..num_tasks)
                .map(|_| ArchiveEntry {
                    best_tree: None,
                    best_chromosome: None,
                    best_cost: f64::INFINITY,
                    generation: 0,
                    evaluations: 0,
                })
                .collect(),
        }
    }

    fn offer(&mut self, ind: &Individual, generation: usize, evaluations: usize) {
        for (k, e) in self.entries.iter_mut().enumerate() {
            if let (Some(c), Some(t)) = (ind.costs[k], &ind.trees[k]) {
                if c < e.best_cost {
                    e.best_cost = c;
                    e.best_tree = Some(t.clone());
                    e.best_chromosome = Some(ind.chromosome.clone());
                    e.generation = generation;
                    e.evaluations = evaluations;
                }
            }
        }
    }

    pub fn best_costs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.best_cost).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenerationStats {
    pub generation: usize,
    pub evaluations: usize,
}

/// Hooks called by [`evolve`]. All methods default to doing nothing.
pub trait Observer {
    fn on_rank_update(&mut self, _population: &[Individual]) {}
    fn on_generation(&mut self, _stats: &GenerationStats, _archive: &Archive) {}
    fn on_transfer(&mut self, _report: &TransferReport) {}
}

pub struct NoopObserver;

impl Observer for NoopObserver {}

/// Writes one tab-separated line per generation
/// (`generation`, `evals`, best cost per task) and one per transfer event.
pub struct ProgressLog<W: Write> {
    pub out: W,
}

impl<W: Write> Observer for ProgressLog<W> {
    fn on_generation(&mut self, stats: &GenerationStats, archive: &Archive) {
        let costs: Vec<String> = archive.best_costs().iter().map(|c| format!("{c:.6e}")).collect();
        let _ = writeln!(self.out, "{}\t{}\t{}", stats.generation, stats.evaluations, costs.join("\t"));
    }

    fn on_transfer(&mut self, r: &TransferReport) {
        let _ = match r.tasks {
            Some((a, b)) => writeln!(
                self.out,
                "transfer\t{}\t{a}-{b}\t{:.4e}->{:.4e}\t{:.4e}->{:.4e}\tadmitted={}/{}",
                r.generation, r.loss_before[0], r.loss_after[0], r.loss_before[1], r.loss_after[1], r.admitted, r.transformed
            ),
            None => writeln!(self.out, "transfer\t{}\tskipped\t{}", r.generation, r.note),
        };
    }
}

/// Scores chromosomes on tasks with a memo of earlier results. Every request
/// counts as one evaluation, cached or not.
struct Evaluator<'a> {
    tasks: &'a [TaskData],
    spec: &'a EncodingSpec,
    fitness: FitnessConfig,
    cache: HashMap<(usize, Vec<u32>), (f64, ExprTree)>,
    pool: rayon::ThreadPool,
    evaluations: usize,
}

impl<'a> Evaluator<'a> {
    fn score(&self, chrom: &Chromosome, task: usize) -> (f64, ExprTree) {
        let td = &self.tasks[task];
        match decode(chrom, self.spec, &td.task.library) {
            Ok(tree) => {
                let (loss, tuned) = factorial_cost(&tree, &td.task, &td.data, &td.cond, &self.fitness);
                (loss.total, tuned)
            }
            Err(_) => (SENTINEL_COST, ExprTree::new(crate::exprcalc::Node::Lit(0.0), Vec::new())),
        }
    }

    fn evaluate(&mut self, jobs: &[(Chromosome, usize)]) -> Vec<(f64, ExprTree)> {
        self.evaluations += jobs.len();
        let mut missing: Vec<(usize, Vec<u32>)> = Vec::new();
        for (c, k) in jobs {
            let key = (*k, c.genes.clone());
            if !self.cache.contains_key(&key) && !missing.contains(&key) {
                missing.push(key);
            }
        }
        let fresh: Vec<(f64, ExprTree)> = self.pool.install(|| {
            missing
                .par_iter()
                .map(|(k, g)| self.score(&Chromosome::new(g.clone()), *k))
                .collect()
        });
        for (key, value) in missing.into_iter().zip(fresh) {
            self.cache.insert(key, value);
        }
        jobs.iter()
            .map(|(c, k)| self.cache[&(*k, c.genes.clone())].clone())
            .collect()
    }

    fn evaluate_individuals(&mut self, jobs: Vec<(Chromosome, usize)>) -> Vec<Individual> {
        let k = self.tasks.len();
        let results = self.evaluate(&jobs);
        jobs.into_iter()
            .zip(results)
            .map(|((c, task), (cost, tree))| {
                let mut ind = Individual::unevaluated(c, k);
                ind.costs[task] = Some(cost);
                ind.trees[task] = Some(tree);
                ind.skill_factor = task;
                ind
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub archive: Archive,
    pub evaluations: usize,
    pub generations: usize,
    pub population: Vec<Individual>,
    pub transfers: Vec<TransferReport>,
    pub spec: EncodingSpec,
}

/// Runs the search with a random initial population.
pub fn evolve(tasks: &[TaskData], cfg: &SolverConfig, observer: &mut dyn Observer) -> Result<RunResult, EngineError> {
    evolve_seeded(tasks, cfg, &[], observer)
}

/// Like [`evolve`], with `seeds` placed at the front of the initial population.
pub fn evolve_seeded(
    tasks: &[TaskData],
    cfg: &SolverConfig,
    seeds: &[Chromosome],
    observer: &mut dyn Observer,
) -> Result<RunResult, EngineError> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(EngineError::NoTasks);
    }
    let k = tasks.len();
    let n = cfg.pop_size;
    if cfg.max_evals < n * k {
        return Err(EngineError::Config(format!(
            "max_evals {} cannot cover the initial {} evaluations",
            cfg.max_evals,
            n * k
        )));
    }
    let task_specs: Vec<TaskSpec> = tasks.iter().map(|t| t.task.clone()).collect();
    let spec = crate::genome::build_encoding_space(&task_specs, cfg.head_len, cfg.num_adfs, cfg.num_adf_args)?;
    for s in seeds {
        s.validate(&spec)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| EngineError::Pool(e.to_string()))?;
    let mut ev = Evaluator {
        tasks,
        spec: &spec,
        fitness: cfg.fitness,
        cache: HashMap::new(),
        pool,
        evaluations: 0,
    };
    let seed = cfg.master_seed;

    let chromosomes: Vec<Chromosome> = (0..n)
        .map(|i| match seeds.get(i) {
            Some(c) => c.clone(),
            None => random_chromosome(&spec, &mut stream_rng(seed, 0, i as u64, INIT_STREAM)),
        })
        .collect();
    let jobs: Vec<(Chromosome, usize)> = chromosomes
        .iter()
        .flat_map(|c| (0..k).map(move |t| (c.clone(), t)))
        .collect();
    let results = ev.evaluate(&jobs);
    let mut pop: Vec<Individual> = chromosomes
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut ind = Individual::unevaluated(c, k);
            for t in 0..k {
                let (cost, tree) = results[i * k + t].clone();
                ind.costs[t] = Some(cost);
                ind.trees[t] = Some(tree);
            }
            ind
        })
        .collect();
    update_ranks(&mut pop, k);
    observer.on_rank_update(&pop);
    let mut archive = Archive::new(k);
    for ind in &pop {
        archive.offer(ind, 0, ev.evaluations);
    }
    observer.on_generation(
        &GenerationStats {
            generation: 0,
            evaluations: ev.evaluations,
        },
        &archive,
    );

    let dim = spec.genome_len();
    let mut nets: Vec<TransferNet> = (0..k)
        .map(|t| {
            TransferNet::new(
                dim,
                cfg.transfer.hidden,
                spec.bound_d as f64,
                cfg.transfer.learning_rate,
                &mut stream_rng(seed, 0, t as u64, NET_STREAM),
            )
        })
        .collect();
    let mut transfers = Vec::new();
    let mut completed = 0;

    for g in 1..=cfg.generations {
        if ev.evaluations + n > cfg.max_evals {
            break;
        }
        let best = best_index(&pop);
        let offspring: Vec<Offspring> = (0..n)
            .map(|i| reproduce(i, &pop, best, &spec, cfg, &mut stream_rng(seed, g as u64, i as u64, REPRODUCE_STREAM)))
            .collect();
        let children = ev.evaluate_individuals(
            offspring
                .into_iter()
                .map(|o| (o.chromosome, o.skill_factor))
                .collect(),
        );
        for c in &children {
            archive.offer(c, g, ev.evaluations);
        }

        let mut merged: Vec<Individual> = pop.iter().cloned().chain(children).collect();
        update_ranks(&mut merged, k);
        let redundant = redundant_flags(&pop);
        let (parents, kids) = merged.split_at(n);
        pop = parents
            .iter()
            .zip(kids)
            .zip(&redundant)
            .map(|((p, c), &r)| one_to_one_select(p.clone(), c.clone(), r))
            .collect();
        update_ranks(&mut pop, k);
        observer.on_rank_update(&pop);

        if cfg.transfer_enabled && g % cfg.transfer_interval == 0 {
            let remaining = cfg.max_evals - ev.evaluations;
            let mut rng = stream_rng(seed, g as u64, 0, TRANSFER_STREAM);
            let (next, report) = transfer_event(
                &pop,
                k,
                &mut nets,
                &spec,
                &cfg.transfer,
                g,
                remaining,
                &mut rng,
                |jobs| {
                    let inds = ev.evaluate_individuals(jobs);
                    for ind in &inds {
                        archive.offer(ind, g, ev.evaluations);
                    }
                    inds
                },
            );
            if report.tasks.is_some() {
                pop = next;
                update_ranks(&mut pop, k);
                observer.on_rank_update(&pop);
            }
            observer.on_transfer(&report);
            transfers.push(report);
        }
        completed = g;
        observer.on_generation(
            &GenerationStats {
                generation: g,
                evaluations: ev.evaluations,
            },
            &archive,
        );
    }

    Ok(RunResult {
        archive,
        evaluations: ev.evaluations,
        generations: completed,
        population: pop,
        transfers,
        spec,
    })
}

use crate::config::ExperimentConfig;
use crate::report::{
    format_params, pair_ablation, summarize_ablation, write_csv, AblationRow, AblationSummaryRow, NoiseRow, ResultRow,
};
use crate::HarnessError;
use nmips_core::datagen::{
    add_noise, dense_grid, generate_dataset, load_dataset, reference_grid, save_dataset, write_atomic, Dataset,
    SolutionGrid,
};
use nmips_core::engine::{evolve, ProgressLog, SolverConfig, TaskData};
use nmips_core::exprcalc::{parse_expr, to_infix, ExprTree};
use nmips_core::fitness::{data_loss, physics_loss, test_mse, SENTINEL_COST};
use nmips_core::pdefam::{make_tasks, sample_conditions, ConditionSet, TaskSpec};
use nmips_core::transfer::TransferReport;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

const INSTANCE_STREAM: u64 = 0;
const CONDITION_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

const DATA_MANIFEST: &str = "manifest.json";

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Tasks and noise-free training data for one seed.
#[derive(Clone, Debug)]
pub struct Instance {
    pub seed: u64,
    pub tasks: Vec<TaskSpec>,
    pub datasets: Vec<Dataset>,
}

/// Draws the tasks (initial conditions included) and their training data
/// from `seed`.
pub fn build_instance(cfg: &ExperimentConfig, seed: u64) -> Result<Instance, HarnessError> {
    let mut rng = stream(seed, INSTANCE_STREAM);
    let tasks = make_tasks(cfg.family, &cfg.task_params(), cfg.shared_ic, &mut rng)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let datasets = tasks
        .iter()
        .map(|t| generate_dataset(t, cfg.data_points, &mut rng))
        .collect::<Result<Vec<_>, _>>()
        .map_err(HarnessError::runtime)?;
    Ok(Instance { seed, tasks, datasets })
}

fn conditions(cfg: &ExperimentConfig, tasks: &[TaskSpec], seed: u64) -> Vec<ConditionSet> {
    let mut rng = stream(seed, CONDITION_STREAM);
    tasks
        .iter()
        .map(|t| sample_conditions(t, cfg.interior_points, cfg.ic_points, cfg.bc_points, &mut rng))
        .collect()
}

/// Training data with noise at `level` times each dataset's RMS, plus the
/// standard deviation used per task.
fn noisy(datasets: &[Dataset], level: f64, seed: u64) -> Result<(Vec<Dataset>, Vec<f64>), HarnessError> {
    let mut rng = stream(seed, NOISE_STREAM);
    let mut out = Vec::with_capacity(datasets.len());
    let mut sigmas = Vec::with_capacity(datasets.len());
    for d in datasets {
        out.push(add_noise(d, level, &mut rng).map_err(|e| HarnessError::Config(e.to_string()))?);
        sigmas.push(level * d.rms());
    }
    Ok((out, sigmas))
}

/// Evaluation grid: the dense grid for closed-form families (optionally at
/// `points` per axis), the solver grid otherwise.
pub fn eval_grid(task: &TaskSpec, points: Option<usize>) -> Result<SolutionGrid, HarnessError> {
    match points {
        Some(n) if task.family.is_analytic() => dense_grid(task, n),
        _ => reference_grid(task),
    }
    .map_err(HarnessError::runtime)
}

/// Test MSE of an expression on a task's evaluation grid.
pub fn score_expression(expr: &str, task: &TaskSpec, points: Option<usize>) -> Result<f64, HarnessError> {
    let tree = parse_expr(expr).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(test_mse(&tree, &eval_grid(task, points)?))
}

fn family_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join(cfg.family.name())
}

fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    family_dir(cfg).join(format!("seed_{seed}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
        writeln!(w)
    })
    .map_err(|e| HarnessError::Runtime(format!("cannot write {}: {e}", path.display())))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataManifest {
    family: String,
    seed: u64,
    shared_ic: bool,
    data_points: usize,
    /// Generator for tasks and data, conditions, and noise: ChaCha8 seeded
    /// with `seed` on these stream ids.
    streams: [u64; 3],
    tasks: Vec<TaskSpec>,
    files: Vec<String>,
}

/// Writes one CSV per task and a manifest for every seed. Returns the data
/// directories.
pub fn cmd_generate(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<PathBuf>, HarnessError> {
    cfg.validate()?;
    let mut dirs = Vec::new();
    for &seed in seeds {
        let inst = build_instance(cfg, seed)?;
        let dir = seed_dir(cfg, seed).join("data");
        let mut files = Vec::new();
        for (task, data) in inst.tasks.iter().zip(&inst.datasets) {
            let name = format!("task_{}.csv", task.task_id);
            save_dataset(data, &dir.join(&name)).map_err(HarnessError::runtime)?;
            files.push(name);
        }
        let manifest = DataManifest {
            family: cfg.family.name().to_string(),
            seed,
            shared_ic: cfg.shared_ic,
            data_points: cfg.data_points,
            streams: [INSTANCE_STREAM, CONDITION_STREAM, NOISE_STREAM],
            tasks: inst.tasks,
            files,
        };
        write_json(&dir.join(DATA_MANIFEST), &manifest)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Reads the datasets written by [`cmd_generate`], checking them against the config.
fn load_instance(cfg: &ExperimentConfig, seed: u64) -> Result<Instance, HarnessError> {
    let dir = seed_dir(cfg, seed).join("data");
    let path = dir.join(DATA_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|_| {
        HarnessError::Runtime(format!(
            "missing dataset for seed {seed} ({}); run `nmips generate` first",
            path.display()
        ))
    })?;
    let m: DataManifest =
        serde_json::from_str(&text).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
    let params: Vec<Vec<f64>> = m.tasks.iter().map(|t| t.params.clone()).collect();
    let mismatch = if m.family != cfg.family.name() {
        Some(format!("family {} vs {}", m.family, cfg.family.name()))
    } else if params != cfg.task_params() {
        Some("task parameters differ".to_string())
    } else if m.shared_ic != cfg.shared_ic {
        Some("shared_ic differs".to_string())
    } else if m.data_points != cfg.data_points {
        Some(format!("data_points {} vs {}", m.data_points, cfg.data_points))
    } else if m.seed != seed {
        Some(format!("seed {} vs {seed}", m.seed))
    } else {
        None
    };
    if let Some(what) = mismatch {
        return Err(HarnessError::Config(format!(
            "config does not match dataset manifest {}: {what}",
            path.display()
        )));
    }
    let datasets = m
        .tasks
        .iter()
        .zip(&m.files)
        .map(|(t, f)| load_dataset(&dir.join(f), t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(HarnessError::runtime)?;
    Ok(Instance {
        seed,
        tasks: m.tasks,
        datasets,
    })
}

/// Training data at the given noise level together with the collocation
/// points, as handed to the engine. Also returns the noise standard
/// deviation per task.
pub fn prepare_tasks(
    cfg: &ExperimentConfig,
    inst: &Instance,
    noise: f64,
) -> Result<(Vec<TaskData>, Vec<f64>), HarnessError> {
    let (data, sigmas) = noisy(&inst.datasets, noise, inst.seed)?;
    let conds = conditions(cfg, &inst.tasks, inst.seed);
    let tasks = inst
        .tasks
        .iter()
        .zip(data)
        .zip(conds)
        .map(|((task, data), cond)| TaskData {
            task: task.clone(),
            data,
            cond,
        })
        .collect();
    Ok((tasks, sigmas))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    family: &'a str,
    seed: u64,
    transfer: bool,
    noise_sigma_frac: f64,
    noise_sigma: &'a [f64],
    data_manifest: String,
    solver: &'a SolverConfig,
    evaluations: usize,
    generations: usize,
    wall_s: f64,
    expressions: &'a [String],
    transfers: &'a [TransferReport],
}

/// One evolutionary run on a loaded instance. Writes the expression files,
/// the progress log and the run manifest under `dir`.
fn solve_instance(
    cfg: &ExperimentConfig,
    inst: &Instance,
    noise: f64,
    dir: &Path,
) -> Result<(Vec<ResultRow>, Vec<f64>), HarnessError> {
    let seed = inst.seed;
    let (tasks, sigmas) = prepare_tasks(cfg, inst, noise)?;
    let mut solver = cfg.solver.clone();
    solver.master_seed = seed;

    fs::create_dir_all(dir).map_err(HarnessError::runtime)?;
    let log = fs::File::create(dir.join("progress.tsv")).map_err(HarnessError::runtime)?;
    let mut observer = ProgressLog { out: BufWriter::new(log) };
    let start = Instant::now();
    let result = evolve(&tasks, &solver, &mut observer).map_err(HarnessError::runtime)?;
    let wall_s = start.elapsed().as_secs_f64();
    observer.out.flush().map_err(HarnessError::runtime)?;

    let mut rows = Vec::with_capacity(tasks.len());
    let mut expressions = Vec::with_capacity(tasks.len());
    for (td, entry) in tasks.iter().zip(&result.archive.entries) {
        let tree = entry
            .best_tree
            .clone()
            .ok_or_else(|| HarnessError::Runtime(format!("task {} was never evaluated", td.task.task_id)))?;
        let expression = to_infix(&tree);
        let grid = eval_grid(&td.task, cfg.eval_grid_points)?;
        let name = format!("task_{}.expr", td.task.task_id);
        write_atomic(&dir.join(&name), |w| writeln!(w, "{expression}")).map_err(HarnessError::runtime)?;
        rows.push(ResultRow {
            family: cfg.family.name().to_string(),
            task_id: td.task.task_id,
            params: format_params(&td.task.params),
            seed,
            mse: test_mse(&tree, &grid),
            best_cost: entry.best_cost,
            evals: result.evaluations,
            generations: result.generations,
            wall_s,
            transfer: solver.transfer_enabled,
            expression: expression.clone(),
        });
        expressions.push(expression);
    }
    let manifest = RunManifest {
        family: cfg.family.name(),
        seed,
        transfer: solver.transfer_enabled,
        noise_sigma_frac: noise,
        noise_sigma: &sigmas,
        data_manifest: seed_dir(cfg, seed).join("data").join(DATA_MANIFEST).display().to_string(),
        solver: &solver,
        evaluations: result.evaluations,
        generations: result.generations,
        wall_s,
        expressions: &expressions,
        transfers: &result.transfers,
    };
    write_json(&dir.join("run.json"), &manifest)?;
    Ok((rows, sigmas))
}

fn arm_name(transfer: bool) -> &'static str {
    if transfer {
        "transfer"
    } else {
        "no_transfer"
    }
}

fn solve_seeds(cfg: &ExperimentConfig, seeds: &[u64], noise: f64, sub: &str) -> Result<Vec<ResultRow>, HarnessError> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let inst = load_instance(cfg, seed)?;
        let dir = seed_dir(cfg, seed).join(sub).join(arm_name(cfg.solver.transfer_enabled));
        rows.extend(solve_instance(cfg, &inst, noise, &dir)?.0);
    }
    Ok(rows)
}

/// Runs the search for every seed on previously generated data and writes
/// `results.csv`.
pub fn cmd_solve(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<ResultRow>, HarnessError> {
    cfg.validate()?;
    let rows = solve_seeds(cfg, seeds, cfg.noise_sigma_frac, "solve")?;
    write_csv(&family_dir(cfg).join("results.csv"), &rows)?;
    Ok(rows)
}

/// Scores a fixed expression on the selected task (all tasks when `task` is
/// `None`). Constants are used as written. The tasks are rebuilt from the seed.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    seed: u64,
    expr: &str,
    task: Option<usize>,
) -> Result<Vec<ResultRow>, HarnessError> {
    cfg.validate()?;
    let tree = parse_expr(expr).map_err(|e| HarnessError::Config(format!("cannot parse expression: {e}")))?;
    let inst = build_instance(cfg, seed)?;
    if let Some(k) = task {
        if k >= inst.tasks.len() {
            return Err(HarnessError::Config(format!(
                "unknown task {k}; {} has tasks 0..{}",
                cfg.family.name(),
                inst.tasks.len()
            )));
        }
    }
    let (data, _) = noisy(&inst.datasets, cfg.noise_sigma_frac, seed)?;
    let conds = conditions(cfg, &inst.tasks, seed);
    let mut rows = Vec::new();
    for (k, t) in inst.tasks.iter().enumerate() {
        if task.is_some_and(|sel| sel != k) {
            continue;
        }
        let start = Instant::now();
        let mse = test_mse(&tree, &eval_grid(t, cfg.eval_grid_points)?);
        rows.push(ResultRow {
            family: cfg.family.name().to_string(),
            task_id: t.task_id,
            params: format_params(&t.params),
            seed,
            mse,
            best_cost: fixed_cost(&tree, t, &data[k], &conds[k], cfg.solver.fitness.lambda_phys),
            evals: 0,
            generations: 0,
            wall_s: start.elapsed().as_secs_f64(),
            transfer: false,
            expression: to_infix(&tree),
        });
    }
    Ok(rows)
}

fn fixed_cost(tree: &ExprTree, task: &TaskSpec, data: &Dataset, cond: &ConditionSet, lambda: f64) -> f64 {
    let (r, ic, bc) = physics_loss(tree, task, cond);
    let total = data_loss(tree, data) + lambda * (r + ic + bc);
    if total.is_finite() {
        total
    } else {
        SENTINEL_COST
    }
}

/// Matched runs with transfer on and off. Writes the raw rows of both arms,
/// the paired rows and the per-task means.
pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    seeds: &[u64],
) -> Result<(Vec<AblationRow>, Vec<AblationSummaryRow>), HarnessError> {
    cfg.validate()?;
    let mut arms = Vec::new();
    for transfer in [true, false] {
        let mut c = cfg.clone();
        c.solver.transfer_enabled = transfer;
        arms.push(solve_seeds(&c, seeds, cfg.noise_sigma_frac, "ablate")?);
    }
    let paired = pair_ablation(&arms[0], &arms[1]);
    let summary = summarize_ablation(&paired);
    let dir = family_dir(cfg);
    let raw: Vec<ResultRow> = arms.concat();
    write_csv(&dir.join("ablation_runs.csv"), &raw)?;
    write_csv(&dir.join("ablation.csv"), &paired)?;
    write_csv(&dir.join("ablation_summary.csv"), &summary)?;
    Ok((paired, summary))
}

/// Solves every seed at each configured noise level and writes `noise_sweep.csv`.
pub fn cmd_noise_sweep(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<NoiseRow>, HarnessError> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &level in &cfg.noise_levels {
        for &seed in seeds {
            let inst = load_instance(cfg, seed)?;
            let dir = seed_dir(cfg, seed)
                .join(format!("noise_{level}"))
                .join(arm_name(cfg.solver.transfer_enabled));
            let (rows, sigmas) = solve_instance(cfg, &inst, level, &dir)?;
            for (r, sigma) in rows.into_iter().zip(sigmas) {
                out.push(NoiseRow {
                    noise_level: level,
                    sigma,
                    family: r.family,
                    task_id: r.task_id,
                    params: r.params,
                    seed: r.seed,
                    mse: r.mse,
                    best_cost: r.best_cost,
                    evals: r.evals,
                    generations: r.generations,
                    wall_s: r.wall_s,
                    transfer: r.transfer,
                    expression: r.expression,
                });
            }
        }
    }
    write_csv(&family_dir(cfg).join("noise_sweep.csv"), &out)?;
    Ok(out)
}

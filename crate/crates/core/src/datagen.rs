//! Benchmark datasets: closed-form evaluation, finite-difference solvers for
//! the two non-analytic families, sampling, noise and CSV persistence.

use crate::exprcalc::{Point, PointBatch, Var};
use crate::pdefam::{exact_value, ic_value, Family, TaskSpec};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_DATA_POINTS: usize = 1100;
/// Dense held-out grid resolution per axis.
pub const TEST_GRID_POINTS: usize = 101;
/// Per-axis resolution of the 3D held-out grid (four axes).
pub const TEST_GRID_POINTS_3D: usize = 41;

pub const BURGERS_NX: usize = 100;
pub const BURGERS_NT: usize = 1000;
pub const ADV_DIFF_NX: usize = 100;
pub const ADV_DIFF_NT: usize = 100;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("{0} has no closed-form solution")]
    NotAnalytic(Family),
    #[error("solver for {expected} called on a {found} task")]
    WrongFamily { expected: Family, found: Family },
    #[error("stability bound exceeded: CFL number {0:.4} > 1")]
    Cfl(f64),
    #[error("singular linear system in implicit step")]
    Singular,
    #[error("requested {requested} points but the grid has {available}")]
    TooManyPoints { requested: usize, available: usize },
    #[error("noise level must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("grid needs at least {0} nodes per axis")]
    GridTooSmall(usize),
    #[error("dataset file is empty")]
    Empty,
    #[error("header {found:?} does not match expected columns {expected:?}")]
    Header { expected: Vec<String>, found: Vec<String> },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Analytic,
    Fdm,
    CrankNicolson,
}

impl Provenance {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Burgers1D => Provenance::Fdm,
            Family::AdvDiff1D => Provenance::CrankNicolson,
            _ => Provenance::Analytic,
        }
    }
}

/// Observed solution values at scattered points.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task_id: usize,
    pub provenance: Provenance,
    pub noise_sigma_frac: f64,
    pub variables: Vec<Var>,
    pub points: PointBatch,
    pub values: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = (Point, f64)> + '_ {
        self.points.points().zip(self.values.iter().copied())
    }

    /// Root-mean-square of the stored values.
    pub fn rms(&self) -> f64 {
        rms(&self.values)
    }
}

fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub var: Var,
    pub values: Vec<f64>,
}

/// Values on a tensor-product grid, row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionGrid {
    pub axes: Vec<Axis>,
    pub values: Vec<f64>,
}

impl SolutionGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.values.len()).collect()
    }

    /// Uniform spacing of the axis for `var`.
    pub fn spacing(&self, var: Var) -> Option<f64> {
        let axis = self.axes.iter().find(|a| a.var == var)?;
        (axis.values.len() > 1).then(|| axis.values[1] - axis.values[0])
    }

    pub fn point(&self, mut index: usize) -> Point {
        let mut p = Point::new();
        for axis in self.axes.iter().rev() {
            let n = axis.values.len();
            p.set(axis.var, axis.values[index % n]);
            index /= n;
        }
        p
    }

    /// Fills `batch` with nodes `start..start + len`.
    pub fn fill_batch(&self, start: usize, len: usize, batch: &mut PointBatch) {
        batch.clear();
        for i in start..(start + len).min(self.len()) {
            batch.push(&self.point(i));
        }
    }

    /// Slice of values at leading-axis index `k` (a time level for solver grids).
    pub fn slice(&self, k: usize) -> &[f64] {
        let stride: usize = self.axes[1..].iter().map(|a| a.values.len()).product();
        &self.values[k * stride..(k + 1) * stride]
    }

    pub fn mean_square(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.len() as f64
    }

    /// Population variance of the values.
    pub fn variance(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + i as f64 * h).collect()
}

/// Closed-form samples at uniformly random points of the domain.
pub fn gen_analytic<R: Rng + ?Sized>(
    task: &TaskSpec,
    n_points: usize,
    rng: &mut R,
) -> Result<Dataset, DatagenError> {
    if !task.family.is_analytic() {
        return Err(DatagenError::NotAnalytic(task.family));
    }
    let mut points = PointBatch::with_capacity(n_points);
    let mut values = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let mut p = Point::new();
        for &v in task.variables() {
            let (lo, hi) = task.domain.bounds(v);
            p.set(v, rng.random_range(lo..=hi));
        }
        values.push(exact_value(task, &p).expect("analytic family"));
        points.push(&p);
    }
    Ok(Dataset {
        task_id: task.task_id,
        provenance: Provenance::Analytic,
        noise_sigma_frac: 0.0,
        variables: task.variables().to_vec(),
        points,
        values,
    })
}

/// Closed-form solution on a tensor grid with `n` nodes per axis, endpoints included.
pub fn dense_grid(task: &TaskSpec, n: usize) -> Result<SolutionGrid, DatagenError> {
    if !task.family.is_analytic() {
        return Err(DatagenError::NotAnalytic(task.family));
    }
    if n < 2 {
        return Err(DatagenError::GridTooSmall(2));
    }
    let axes: Vec<Axis> = task
        .variables()
        .iter()
        .map(|&var| {
            let (lo, hi) = task.domain.bounds(var);
            Axis {
                var,
                values: linspace(lo, hi, n),
            }
        })
        .collect();
    let mut grid = SolutionGrid {
        axes,
        values: Vec::new(),
    };
    let total = n.pow(grid.axes.len() as u32);
    grid.values = (0..total)
        .map(|i| exact_value(task, &grid.point(i)).expect("analytic family"))
        .collect();
    Ok(grid)
}

/// Held-out reference field: a dense closed-form grid for analytic families,
/// the default solver grid otherwise.
pub fn reference_grid(task: &TaskSpec) -> Result<SolutionGrid, DatagenError> {
    match task.family {
        Family::Burgers1D => solve_burgers_fdm(task),
        Family::AdvDiff1D => solve_adv_diff_cn(task),
        Family::Adv3D => dense_grid(task, TEST_GRID_POINTS_3D),
        _ => dense_grid(task, TEST_GRID_POINTS),
    }
}

/// Resolution of a 1D time-stepping solve over the task's time interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resolution {
    pub nx: usize,
    pub nt: usize,
    /// Store every `save_every`-th time level (the last level is always stored).
    pub save_every: usize,
}

impl Resolution {
    pub fn new(nx: usize, nt: usize) -> Self {
        Self { nx, nt, save_every: 1 }
    }
}

fn check_family(task: &TaskSpec, expected: Family) -> Result<(), DatagenError> {
    if task.family != expected {
        return Err(DatagenError::WrongFamily {
            expected,
            found: task.family,
        });
    }
    Ok(())
}

/// Runs `step` over the periodic grid `x_i = i / nx` and collects time levels.
fn march(
    task: &TaskSpec,
    res: Resolution,
    initial: Vec<f64>,
    mut step: impl FnMut(&[f64], &mut [f64]) -> Result<(), DatagenError>,
) -> Result<SolutionGrid, DatagenError> {
    let (t0, t1) = task.domain.bounds(Var::T);
    let dt = (t1 - t0) / res.nt as f64;
    let every = res.save_every.max(1);
    let mut times = vec![t0];
    let mut values = initial.clone();
    let mut u = initial;
    let mut next = vec![0.0; u.len()];
    for n in 1..=res.nt {
        step(&u, &mut next)?;
        std::mem::swap(&mut u, &mut next);
        if n % every == 0 || n == res.nt {
            times.push(t0 + n as f64 * dt);
            values.extend_from_slice(&u);
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DatagenError::Cfl(f64::INFINITY));
    }
    let x = (0..res.nx).map(|i| i as f64 / res.nx as f64).collect();
    Ok(SolutionGrid {
        axes: vec![
            Axis {
                var: Var::T,
                values: times,
            },
            Axis { var: Var::X, values: x },
        ],
        values,
    })
}

fn initial_profile(task: &TaskSpec, nx: usize) -> Vec<f64> {
    (0..nx)
        .map(|i| ic_value(task, &Point::new().with(Var::X, i as f64 / nx as f64)))
        .collect()
}

pub fn solve_burgers_fdm(task: &TaskSpec) -> Result<SolutionGrid, DatagenError> {
    solve_burgers_fdm_with(task, Resolution::new(BURGERS_NX, BURGERS_NT))
}

/// Viscous Burgers in conservative form with a local Lax-Friedrichs flux,
/// central diffusion with coefficient `nu / pi`, explicit Euler in time,
/// periodic in x.
pub fn solve_burgers_fdm_with(task: &TaskSpec, res: Resolution) -> Result<SolutionGrid, DatagenError> {
    check_family(task, Family::Burgers1D)?;
    if res.nx < 3 || res.nt < 1 {
        return Err(DatagenError::GridTooSmall(3));
    }
    let nu = task.params[0] / PI;
    let (t0, t1) = task.domain.bounds(Var::T);
    let dx = 1.0 / res.nx as f64;
    let dt = (t1 - t0) / res.nt as f64;
    let u0 = initial_profile(task, res.nx);
    let umax = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cfl = umax * dt / dx + 2.0 * nu * dt / (dx * dx);
    if cfl > 1.0 {
        return Err(DatagenError::Cfl(cfl));
    }
    let n = res.nx;
    let mut flux = vec![0.0; n];
    march(task, res, u0, |u, out| {
        // flux[i] sits on the face between cells i and i+1
        for i in 0..n {
            let (a, b) = (u[i], u[(i + 1) % n]);
            let speed = a.abs().max(b.abs());
            flux[i] = 0.25 * (a * a + b * b) - 0.5 * speed * (b - a);
        }
        for i in 0..n {
            let left = (i + n - 1) % n;
            let right = (i + 1) % n;
            let conv = (flux[i] - flux[left]) / dx;
            let diff = nu * (u[right] - 2.0 * u[i] + u[left]) / (dx * dx);
            out[i] = u[i] + dt * (diff - conv);
        }
        Ok(())
    })
}

pub fn solve_adv_diff_cn(task: &TaskSpec) -> Result<SolutionGrid, DatagenError> {
    solve_adv_diff_cn_with(task, Resolution::new(ADV_DIFF_NX, ADV_DIFF_NT))
}

/// Advection-diffusion with Crank-Nicolson in time and centered differences
/// in space on a periodic grid.
pub fn solve_adv_diff_cn_with(task: &TaskSpec, res: Resolution) -> Result<SolutionGrid, DatagenError> {
    check_family(task, Family::AdvDiff1D)?;
    if res.nx < 3 || res.nt < 1 {
        return Err(DatagenError::GridTooSmall(3));
    }
    let (beta, alpha) = (task.params[0], task.params[1]);
    let (t0, t1) = task.domain.bounds(Var::T);
    let dx = 1.0 / res.nx as f64;
    let dt = (t1 - t0) / res.nt as f64;
    // spatial operator stencil (u[i-1], u[i], u[i+1])
    let lower = beta / (2.0 * dx) + alpha / (dx * dx);
    let diag = -2.0 * alpha / (dx * dx);
    let upper = -beta / (2.0 * dx) + alpha / (dx * dx);
    let h = 0.5 * dt;
    let system = CyclicTridiagonal::new(res.nx, -h * lower, 1.0 - h * diag, -h * upper)?;
    let n = res.nx;
    let mut rhs = vec![0.0; n];
    let u0 = initial_profile(task, n);
    march(task, res, u0, |u, out| {
        for i in 0..n {
            let l = u[(i + n - 1) % n];
            let r = u[(i + 1) % n];
            rhs[i] = u[i] + h * (lower * l + diag * u[i] + upper * r);
        }
        system.solve(&rhs, out);
        Ok(())
    })
}

/// Constant-coefficient periodic tridiagonal system, solved by the Thomas
/// algorithm with a Sherman-Morrison correction for the corner entries.
struct CyclicTridiagonal {
    n: usize,
    a: f64,
    c: f64,
    gamma: f64,
    // modified diagonal, forward sweep factors
    diag: Vec<f64>,
    cprime: Vec<f64>,
    z: Vec<f64>,
}

impl CyclicTridiagonal {
    fn new(n: usize, a: f64, b: f64, c: f64) -> Result<Self, DatagenError> {
        let gamma = -b;
        let mut diag = vec![b; n];
        diag[0] = b - gamma;
        diag[n - 1] = b - c * a / gamma;
        let mut s = Self {
            n,
            a,
            c,
            gamma,
            diag,
            cprime: vec![0.0; n],
            z: vec![0.0; n],
        };
        let mut denom = s.diag[0];
        for i in 0..n {
            if i > 0 {
                denom = s.diag[i] - s.a * s.cprime[i - 1];
            }
            if denom == 0.0 || !denom.is_finite() {
                return Err(DatagenError::Singular);
            }
            s.cprime[i] = s.c / denom;
        }
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = c;
        let mut z = vec![0.0; n];
        s.thomas(&u, &mut z);
        let denom = 1.0 + z[0] + a * z[n - 1] / gamma;
        if denom == 0.0 || !denom.is_finite() {
            return Err(DatagenError::Singular);
        }
        s.z = z;
        Ok(s)
    }

    fn thomas(&self, rhs: &[f64], x: &mut [f64]) {
        let n = self.n;
        let mut d = vec![0.0; n];
        d[0] = rhs[0] / self.diag[0];
        for i in 1..n {
            let denom = self.diag[i] - self.a * self.cprime[i - 1];
            d[i] = (rhs[i] - self.a * d[i - 1]) / denom;
        }
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - self.cprime[i] * x[i + 1];
        }
    }

    fn solve(&self, rhs: &[f64], x: &mut [f64]) {
        let n = self.n;
        self.thomas(rhs, x);
        let z = &self.z;
        let factor = (x[0] + self.a * x[n - 1] / self.gamma) / (1.0 + z[0] + self.a * z[n - 1] / self.gamma);
        for i in 0..n {
            x[i] -= factor * z[i];
        }
    }
}

/// Distinct grid nodes drawn uniformly without replacement.
pub fn sample_grid<R: Rng + ?Sized>(
    task: &TaskSpec,
    grid: &SolutionGrid,
    n_points: usize,
    rng: &mut R,
) -> Result<Dataset, DatagenError> {
    if n_points > grid.len() {
        return Err(DatagenError::TooManyPoints {
            requested: n_points,
            available: grid.len(),
        });
    }
    let picks = rand::seq::index::sample(rng, grid.len(), n_points);
    let mut points = PointBatch::with_capacity(n_points);
    let mut values = Vec::with_capacity(n_points);
    for i in picks.iter() {
        points.push(&grid.point(i));
        values.push(grid.values[i]);
    }
    Ok(Dataset {
        task_id: task.task_id,
        provenance: Provenance::for_family(task.family),
        noise_sigma_frac: 0.0,
        variables: task.variables().to_vec(),
        points,
        values,
    })
}

/// Training data for a task: closed-form samples or samples of the solver grid.
pub fn generate_dataset<R: Rng + ?Sized>(
    task: &TaskSpec,
    n_points: usize,
    rng: &mut R,
) -> Result<Dataset, DatagenError> {
    if task.family.is_analytic() {
        gen_analytic(task, n_points, rng)
    } else {
        let grid = reference_grid(task)?;
        sample_grid(task, &grid, n_points, rng)
    }
}

/// Adds Gaussian noise with standard deviation `sigma_frac` times the RMS of
/// the stored values.
pub fn add_noise<R: Rng + ?Sized>(data: &Dataset, sigma_frac: f64, rng: &mut R) -> Result<Dataset, DatagenError> {
    if !(sigma_frac >= 0.0) {
        return Err(DatagenError::NegativeSigma(sigma_frac));
    }
    let mut out = data.clone();
    out.noise_sigma_frac = sigma_frac;
    if sigma_frac == 0.0 {
        return Ok(out);
    }
    let sd = sigma_frac * data.rms();
    let normal = Normal::new(0.0, sd).map_err(|_| DatagenError::NegativeSigma(sigma_frac))?;
    for v in &mut out.values {
        *v += normal.sample(rng);
    }
    Ok(out)
}

/// Writes a file atomically through a temporary sibling.
pub fn write_atomic(path: &Path, contents: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        contents(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

fn column_names(vars: &[Var]) -> Vec<String> {
    vars.iter()
        .map(|v| v.name().to_string())
        .chain(std::iter::once("u".to_string()))
        .collect()
}

/// CSV with columns `<vars>,u` and 17 significant digits.
pub fn save_dataset(data: &Dataset, path: &Path) -> Result<(), DatagenError> {
    write_atomic(path, |w| {
        writeln!(w, "{}", column_names(&data.variables).join(","))?;
        for (p, u) in data.records() {
            let mut line = String::new();
            for &v in &data.variables {
                line.push_str(&format!("{:.16e},", p.get(v)));
            }
            line.push_str(&format!("{u:.16e}"));
            writeln!(w, "{line}")?;
        }
        Ok(())
    })?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`], checking the columns
/// against the task's variables.
pub fn load_dataset(path: &Path, task: &TaskSpec) -> Result<Dataset, DatagenError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_error)?;
    let found: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let expected = column_names(task.variables());
    if found.iter().all(|s| s.is_empty()) {
        return Err(DatagenError::Empty);
    }
    if found != expected {
        return Err(DatagenError::Header { expected, found });
    }
    let vars = task.variables();
    let mut points = PointBatch::new();
    let mut values = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line());
        let mut p = Point::new();
        let parse = |k: usize| -> Result<f64, DatagenError> {
            row[k].trim().parse::<f64>().map_err(|e| DatagenError::Malformed {
                line,
                message: format!("column {}: {e}", expected[k]),
            })
        };
        for (k, &v) in vars.iter().enumerate() {
            p.set(v, parse(k)?);
        }
        values.push(parse(vars.len())?);
        points.push(&p);
    }
    if values.is_empty() {
        return Err(DatagenError::Empty);
    }
    Ok(Dataset {
        task_id: task.task_id,
        provenance: Provenance::for_family(task.family),
        noise_sigma_frac: 0.0,
        variables: vars.to_vec(),
        points,
        values,
    })
}

fn csv_error(e: csv::Error) -> DatagenError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DatagenError::Io(io),
        other => DatagenError::Malformed {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Periodic total variation of a profile.
pub fn total_variation(u: &[f64]) -> f64 {
    let n = u.len();
    (0..n).map(|i| (u[(i + 1) % n] - u[i]).abs()).sum()
}

//! The six benchmark PDE families: parameters, domains, initial conditions,
//! residual operators and collocation sampling.

use crate::exprcalc::{
    add, differentiate, eval, mul, sub, ExprTree, Node, Point, PointBatch, UnaryOp, Var,
};
use crate::genome::{Function, SymbolLibrary};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

/// Upper bound for random wavenumber indices.
pub const N_MAX: u32 = 8;
/// Sine components in a 1D initial condition.
pub const SINE_SUM_COMPONENTS: usize = 2;

pub const DEFAULT_INTERIOR: usize = 256;
pub const DEFAULT_IC: usize = 64;
pub const DEFAULT_BC: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "adv1d")]
    Adv1D,
    #[serde(rename = "burgers1d")]
    Burgers1D,
    #[serde(rename = "advdiff1d")]
    AdvDiff1D,
    #[serde(rename = "adv2d")]
    Adv2D,
    #[serde(rename = "ns2d")]
    NS2D,
    #[serde(rename = "adv3d")]
    Adv3D,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Adv1D,
        Family::Burgers1D,
        Family::AdvDiff1D,
        Family::Adv2D,
        Family::NS2D,
        Family::Adv3D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Adv1D => "adv1d",
            Family::Burgers1D => "burgers1d",
            Family::AdvDiff1D => "advdiff1d",
            Family::Adv2D => "adv2d",
            Family::NS2D => "ns2d",
            Family::Adv3D => "adv3d",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        let lower = name.to_ascii_lowercase();
        Family::ALL.into_iter().find(|f| f.name() == lower)
    }

    /// Spatial variables followed by `t`.
    pub fn variables(self) -> &'static [Var] {
        match self {
            Family::Adv1D | Family::Burgers1D | Family::AdvDiff1D => &[Var::X, Var::T],
            Family::Adv2D | Family::NS2D => &[Var::X, Var::Y, Var::T],
            Family::Adv3D => &[Var::X, Var::Y, Var::Z, Var::T],
        }
    }

    pub fn spatial_variables(self) -> &'static [Var] {
        let v = self.variables();
        &v[..v.len() - 1]
    }

    pub fn functions(self) -> &'static [Function] {
        match self {
            Family::Adv1D | Family::Adv2D | Family::Adv3D => &SymbolLibrary::ADVECTION,
            Family::Burgers1D | Family::AdvDiff1D | Family::NS2D => &SymbolLibrary::EXTENDED,
        }
    }

    pub fn library(self) -> SymbolLibrary {
        SymbolLibrary::new(self.functions(), self.variables())
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Adv1D => &["beta"],
            Family::Burgers1D | Family::NS2D => &["nu"],
            Family::AdvDiff1D => &["beta", "alpha"],
            Family::Adv2D => &["beta_x", "beta_y"],
            Family::Adv3D => &["beta_x", "beta_y", "beta_z"],
        }
    }

    /// True when data come from a closed-form solution.
    pub fn is_analytic(self) -> bool {
        matches!(self, Family::Adv1D | Family::Adv2D | Family::NS2D | Family::Adv3D)
    }

    pub fn t_end(self) -> f64 {
        match self {
            Family::Adv2D | Family::Adv3D => 1.0,
            _ => 2.0,
        }
    }

    /// Parameter vectors of the four benchmark tasks.
    pub fn default_params(self) -> Vec<Vec<f64>> {
        let betas = [0.1, 0.4, 0.7, 1.0];
        match self {
            Family::Adv1D => betas.iter().map(|&b| vec![b]).collect(),
            Family::Burgers1D => [0.001, 0.004, 0.007, 0.01].iter().map(|&v| vec![v]).collect(),
            Family::AdvDiff1D => betas
                .iter()
                .zip([0.001, 0.002, 0.001, 0.004])
                .map(|(&b, a)| vec![b, a])
                .collect(),
            Family::Adv2D => betas
                .iter()
                .zip([0.842, 0.349, 0.969, 0.186])
                .map(|(&bx, by)| vec![bx, by])
                .collect(),
            Family::NS2D => [0.005, 0.02, 0.035, 0.05].iter().map(|&v| vec![v]).collect(),
            Family::Adv3D => betas
                .iter()
                .zip([(0.983, 0.548), (0.579, 0.573), (0.818, 0.951), (0.697, 0.204)])
                .map(|(&bx, (by, bz))| vec![bx, by, bz])
                .collect(),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdeError {
    #[error("{family} expects {expected} parameters, got {found}")]
    ParamCount {
        family: Family,
        expected: usize,
        found: usize,
    },
    #[error("parameter {name} = {value} must be strictly positive and finite")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("initial condition mode {mode:?} does not fit {family}")]
    IcMismatch { family: Family, mode: IcMode },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IcMode {
    SineSum,
    SineProduct,
    TaylorGreen,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcComponent {
    pub amplitude: f64,
    pub wavenumber_index: u32,
    pub phase: f64,
}

impl IcComponent {
    /// Angular wavenumber on the unit domain.
    pub fn k(&self) -> f64 {
        2.0 * PI * self.wavenumber_index as f64
    }
}

/// Initial condition. `SineSum` adds its components along x; `SineProduct`
/// multiplies one component per spatial axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcSpec {
    pub mode: IcMode,
    pub components: Vec<IcComponent>,
}

impl IcSpec {
    pub fn taylor_green() -> Self {
        Self {
            mode: IcMode::TaylorGreen,
            components: Vec::new(),
        }
    }

    /// Random draw for `family`.
    pub fn random<R: Rng + ?Sized>(family: Family, rng: &mut R) -> Self {
        let phase = |rng: &mut R| rng.random_range(0.0..2.0 * PI);
        match family {
            Family::NS2D => Self::taylor_green(),
            Family::Adv2D | Family::Adv3D => Self {
                mode: IcMode::SineProduct,
                components: family
                    .spatial_variables()
                    .iter()
                    .map(|_| IcComponent {
                        amplitude: 1.0,
                        wavenumber_index: rng.random_range(1..=N_MAX),
                        phase: phase(rng),
                    })
                    .collect(),
            },
            _ => Self {
                mode: IcMode::SineSum,
                components: (0..SINE_SUM_COMPONENTS)
                    .map(|_| IcComponent {
                        amplitude: rng.random_range(0.0..1.0),
                        wavenumber_index: rng.random_range(1..=N_MAX),
                        phase: phase(rng),
                    })
                    .collect(),
            },
        }
    }

    fn fits(&self, family: Family) -> bool {
        match self.mode {
            IcMode::TaylorGreen => family == Family::NS2D,
            IcMode::SineSum => family.spatial_variables().len() == 1,
            IcMode::SineProduct => self.components.len() == family.spatial_variables().len(),
        }
    }
}

/// Closed bounds per variable. Unused variables stay at `[0, 0]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl Domain {
    pub fn for_family(family: Family) -> Self {
        let mut d = Domain {
            lower: [0.0; 4],
            upper: [0.0; 4],
        };
        for &v in family.spatial_variables() {
            d.upper[v.index()] = 1.0;
        }
        d.upper[Var::T.index()] = family.t_end();
        d
    }

    pub fn bounds(&self, var: Var) -> (f64, f64) {
        (self.lower[var.index()], self.upper[var.index()])
    }

    pub fn contains(&self, p: &Point) -> bool {
        Var::ALL.iter().all(|&v| {
            let x = p.get(v);
            x >= self.lower[v.index()] && x <= self.upper[v.index()]
        })
    }
}

/// One parameterized member of a PDE family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub family: Family,
    pub params: Vec<f64>,
    pub domain: Domain,
    pub ic: IcSpec,
    pub library: SymbolLibrary,
}

impl TaskSpec {
    pub fn new(family: Family, params: Vec<f64>, ic: IcSpec, task_id: usize) -> Result<Self, PdeError> {
        let names = family.param_names();
        if params.len() != names.len() {
            return Err(PdeError::ParamCount {
                family,
                expected: names.len(),
                found: params.len(),
            });
        }
        for (&name, &value) in names.iter().zip(&params) {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PdeError::NonPositiveParam { name, value });
            }
        }
        if !ic.fits(family) {
            return Err(PdeError::IcMismatch { family, mode: ic.mode });
        }
        Ok(Self {
            task_id,
            family,
            params,
            domain: Domain::for_family(family),
            ic,
            library: family.library(),
        })
    }

    pub fn variables(&self) -> &'static [Var] {
        self.family.variables()
    }

    /// Advection velocity along each spatial axis (empty for non-advective families).
    fn velocities(&self) -> &[f64] {
        match self.family {
            Family::Adv1D | Family::Adv2D | Family::Adv3D => &self.params,
            Family::AdvDiff1D => &self.params[..1],
            Family::Burgers1D | Family::NS2D => &[],
        }
    }
}

/// Builds the family's tasks for the given parameter vectors. Each task gets
/// its own IC draw unless `shared_ic` is set.
pub fn make_tasks<R: Rng + ?Sized>(
    family: Family,
    params: &[Vec<f64>],
    shared_ic: bool,
    rng: &mut R,
) -> Result<Vec<TaskSpec>, PdeError> {
    let shared = IcSpec::random(family, rng);
    params
        .iter()
        .enumerate()
        .map(|(id, p)| {
            let ic = if shared_ic || id == 0 {
                shared.clone()
            } else {
                IcSpec::random(family, rng)
            };
            TaskSpec::new(family, p.clone(), ic, id)
        })
        .collect()
}

/// Initial condition at the spatial coordinates of `point`.
pub fn ic_value(task: &TaskSpec, point: &Point) -> f64 {
    let ic = &task.ic;
    match ic.mode {
        IcMode::TaylorGreen => (2.0 * PI * point.get(Var::X)).sin() * (2.0 * PI * point.get(Var::Y)).sin(),
        IcMode::SineSum => ic
            .components
            .iter()
            .map(|c| c.amplitude * (c.k() * point.get(Var::X) + c.phase).sin())
            .sum(),
        IcMode::SineProduct => task
            .family
            .spatial_variables()
            .iter()
            .zip(&ic.components)
            .map(|(&v, c)| c.amplitude * (c.k() * point.get(v) + c.phase).sin())
            .product(),
    }
}

/// Closed-form solution value for analytic families.
pub fn exact_value(task: &TaskSpec, point: &Point) -> Option<f64> {
    match task.family {
        Family::NS2D => {
            let decay = (-8.0 * PI * PI * task.params[0] * point.get(Var::T)).exp();
            Some(ic_value(task, point) * decay)
        }
        Family::Adv1D | Family::Adv2D | Family::Adv3D => {
            let t = point.get(Var::T);
            let mut shifted = *point;
            for (&v, &beta) in task.family.spatial_variables().iter().zip(task.velocities()) {
                shifted.set(v, point.get(v) - beta * t);
            }
            Some(ic_value(task, &shifted))
        }
        Family::Burgers1D | Family::AdvDiff1D => None,
    }
}

fn lit(x: f64) -> Node {
    Node::Lit(x)
}

fn sin(a: Node) -> Node {
    Node::unary(UnaryOp::Sin, a)
}

/// Closed-form solution as a constant-free tree for analytic families.
pub fn exact_solution(task: &TaskSpec) -> Option<ExprTree> {
    let spatial = task.family.spatial_variables();
    let root = match task.family {
        Family::NS2D => {
            let decay = Node::unary(
                UnaryOp::Exp,
                mul(lit(-8.0 * PI * PI * task.params[0]), Node::Var(Var::T)),
            );
            let sx = sin(mul(lit(2.0 * PI), Node::Var(Var::X)));
            let sy = sin(mul(lit(2.0 * PI), Node::Var(Var::Y)));
            mul(mul(sx, sy), decay)
        }
        Family::Adv1D | Family::Adv2D | Family::Adv3D => {
            let shifted = |v: Var, beta: f64| sub(Node::Var(v), mul(lit(beta), Node::Var(Var::T)));
            let wave = |c: &IcComponent, arg: Node| {
                mul(lit(c.amplitude), sin(add(mul(lit(c.k()), arg), lit(c.phase))))
            };
            let betas = task.velocities();
            match task.ic.mode {
                IcMode::SineSum => task
                    .ic
                    .components
                    .iter()
                    .map(|c| wave(c, shifted(Var::X, betas[0])))
                    .reduce(add)?,
                IcMode::SineProduct => spatial
                    .iter()
                    .zip(betas)
                    .zip(&task.ic.components)
                    .map(|((&v, &b), c)| wave(c, shifted(v, b)))
                    .reduce(mul)?,
                IcMode::TaylorGreen => return None,
            }
        }
        Family::Burgers1D | Family::AdvDiff1D => return None,
    };
    Some(ExprTree::new(root, Vec::new()))
}

/// The family's differential operator applied to `u`, as a tree sharing
/// `u`'s constants. An exact solution evaluates to zero everywhere.
pub fn residual_tree(task: &TaskSpec, u: &ExprTree) -> ExprTree {
    let d = |v: Var, order: u32| differentiate(u, v, order).root;
    let p = &task.params;
    let transport = |betas: &[f64]| {
        task.family
            .spatial_variables()
            .iter()
            .zip(betas)
            .fold(d(Var::T, 1), |acc, (&v, &b)| add(acc, mul(lit(b), d(v, 1))))
    };
    let root = match task.family {
        Family::Adv1D | Family::Adv2D | Family::Adv3D => transport(p),
        Family::AdvDiff1D => sub(transport(&p[..1]), mul(lit(p[1]), d(Var::X, 2))),
        Family::Burgers1D => sub(
            add(d(Var::T, 1), mul(u.root.clone(), d(Var::X, 1))),
            mul(lit(p[0] / PI), d(Var::X, 2)),
        ),
        Family::NS2D => sub(
            d(Var::T, 1),
            mul(lit(p[0]), add(d(Var::X, 2), d(Var::Y, 2))),
        ),
    };
    ExprTree {
        root,
        constants: u.constants.clone(),
    }
}

/// Residual value at one point; `None` if evaluation is not finite.
pub fn residual(task: &TaskSpec, u: &ExprTree, point: &Point) -> Option<f64> {
    eval(&residual_tree(task, u), point)
}

/// Collocation points for the physics penalties. Boundary pairs hold the
/// lower and upper face of one spatial axis at identical other coordinates,
/// `n_bc` pairs per spatial axis.
#[derive(Clone, Debug, Default)]
pub struct ConditionSet {
    pub interior: PointBatch,
    pub ic_points: PointBatch,
    pub ic_values: Vec<f64>,
    pub bc_lower: PointBatch,
    pub bc_upper: PointBatch,
}

impl ConditionSet {
    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_ic(&self) -> usize {
        self.ic_points.len()
    }

    pub fn n_bc(&self) -> usize {
        self.bc_lower.len()
    }
}

fn uniform_point<R: Rng + ?Sized>(domain: &Domain, vars: &[Var], rng: &mut R) -> Point {
    let mut p = Point::new();
    for &v in vars {
        let (lo, hi) = domain.bounds(v);
        p.set(v, rng.random_range(lo..=hi));
    }
    p
}

pub fn sample_conditions<R: Rng + ?Sized>(
    task: &TaskSpec,
    n_interior: usize,
    n_ic: usize,
    n_bc: usize,
    rng: &mut R,
) -> ConditionSet {
    let vars = task.variables();
    let spatial = task.family.spatial_variables();
    let domain = &task.domain;
    let mut set = ConditionSet::default();
    for _ in 0..n_interior {
        set.interior.push(&uniform_point(domain, vars, rng));
    }
    let t0 = domain.bounds(Var::T).0;
    for _ in 0..n_ic {
        let p = uniform_point(domain, spatial, rng).with(Var::T, t0);
        set.ic_values.push(ic_value(task, &p));
        set.ic_points.push(&p);
    }
    for &axis in spatial {
        let (lo, hi) = domain.bounds(axis);
        for _ in 0..n_bc {
            let p = uniform_point(domain, vars, rng);
            set.bc_lower.push(&p.with(axis, lo));
            set.bc_upper.push(&p.with(axis, hi));
        }
    }
    set
}

//! Factorial cost of a candidate expression on one task: data RMSE plus
//! weighted physics penalties, after tuning the expression's constants.

use crate::datagen::{Dataset, SolutionGrid};
use crate::exprcalc::{eval_batch, eval_batch_with_grad, ExprTree, PointBatch};
use crate::pdefam::{residual_tree, ConditionSet, TaskSpec};
use serde::{Deserialize, Serialize};

/// Cost assigned to candidates whose evaluation is not finite.
pub const SENTINEL_COST: f64 = 1e30;
pub const DEFAULT_LAMBDA_PHYS: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstOptConfig {
    pub max_steps: usize,
    pub learning_rate: f64,
    pub include_physics_terms: bool,
}

impl Default for ConstOptConfig {
    fn default() -> Self {
        Self {
            max_steps: 50,
            learning_rate: 0.05,
            include_physics_terms: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitnessConfig {
    pub lambda_phys: f64,
    pub const_opt: ConstOptConfig,
}

impl Default for FitnessConfig {
    fn default() -> Self {
        Self {
            lambda_phys: DEFAULT_LAMBDA_PHYS,
            const_opt: ConstOptConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data_loss: f64,
    pub residual_loss: f64,
    pub ic_loss: f64,
    pub bc_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn sentinel() -> Self {
        Self {
            data_loss: SENTINEL_COST,
            residual_loss: SENTINEL_COST,
            ic_loss: SENTINEL_COST,
            bc_loss: SENTINEL_COST,
            total: SENTINEL_COST,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.total >= SENTINEL_COST
    }

    fn assemble(data: f64, residual: f64, ic: f64, bc: f64, lambda: f64) -> Self {
        let total = data + lambda * (residual + ic + bc);
        if !total.is_finite() || total >= SENTINEL_COST {
            return Self::sentinel();
        }
        Self {
            data_loss: data,
            residual_loss: residual,
            ic_loss: ic,
            bc_loss: bc,
            total,
        }
    }
}

fn rmse(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
}

/// RMSE between predictions and observations, or the sentinel.
pub fn data_loss(u: &ExprTree, data: &Dataset) -> f64 {
    match eval_batch(u, &data.points) {
        Some(pred) => {
            let r: Vec<f64> = pred.iter().zip(&data.values).map(|(p, y)| p - y).collect();
            rmse(&r)
        }
        None => SENTINEL_COST,
    }
}

/// Residual, initial-condition and periodic-boundary RMSEs. Each is the
/// sentinel when its evaluation is poisoned.
pub fn physics_loss(u: &ExprTree, task: &TaskSpec, cond: &ConditionSet) -> (f64, f64, f64) {
    physics_terms(u, &residual_tree(task, u), cond)
}

fn physics_terms(u: &ExprTree, residual: &ExprTree, cond: &ConditionSet) -> (f64, f64, f64) {
    let against = |batch: &PointBatch, target: &[f64]| {
        eval_batch(u, batch).map_or(SENTINEL_COST, |p| {
            rmse(&p.iter().zip(target).map(|(a, b)| a - b).collect::<Vec<_>>())
        })
    };
    let res = if cond.interior.is_empty() {
        0.0
    } else {
        eval_batch(residual, &cond.interior).map_or(SENTINEL_COST, |r| rmse(&r))
    };
    let ic = if cond.ic_points.is_empty() {
        0.0
    } else {
        against(&cond.ic_points, &cond.ic_values)
    };
    let bc = if cond.bc_lower.is_empty() {
        0.0
    } else {
        match eval_batch(u, &cond.bc_upper) {
            Some(hi) => against(&cond.bc_lower, &hi),
            None => SENTINEL_COST,
        }
    };
    (res, ic, bc)
}

/// One RMSE term and its gradient with respect to the constants.
struct Term {
    value: f64,
    grad: Vec<f64>,
}

fn rmse_term(residuals: Vec<f64>, jac: &[Vec<f64>]) -> Term {
    let value = rmse(&residuals);
    let n = residuals.len() as f64;
    let grad = jac
        .iter()
        .map(|g| {
            if value == 0.0 {
                0.0
            } else {
                g.iter().zip(&residuals).map(|(d, r)| d * r).sum::<f64>() / (n * value)
            }
        })
        .collect();
    Term { value, grad }
}

/// Loss assembly for one (tree structure, task, data, conditions) tuple.
struct Objective<'a> {
    u: ExprTree,
    residual: ExprTree,
    data: &'a Dataset,
    cond: &'a ConditionSet,
    lambda: f64,
}

impl<'a> Objective<'a> {
    fn new(u: &ExprTree, task: &TaskSpec, data: &'a Dataset, cond: &'a ConditionSet, lambda: f64) -> Self {
        Self {
            u: u.clone(),
            residual: residual_tree(task, u),
            data,
            cond,
            lambda,
        }
    }

    fn term_against(&self, tree: &ExprTree, batch: &PointBatch, target: &[f64]) -> Option<Term> {
        let k = tree.constants.len();
        if batch.is_empty() {
            return Some(Term {
                value: 0.0,
                grad: vec![0.0; k],
            });
        }
        let (v, jac) = eval_batch_with_grad(tree, batch)?;
        let r = if target.is_empty() {
            v
        } else {
            v.iter().zip(target).map(|(a, b)| a - b).collect()
        };
        Some(rmse_term(r, &jac))
    }

    fn bc_term(&self, u: &ExprTree) -> Option<Term> {
        let k = u.constants.len();
        if self.cond.bc_lower.is_empty() {
            return Some(Term {
                value: 0.0,
                grad: vec![0.0; k],
            });
        }
        let (lo, jlo) = eval_batch_with_grad(u, &self.cond.bc_lower)?;
        let (hi, jhi) = eval_batch_with_grad(u, &self.cond.bc_upper)?;
        let r = lo.iter().zip(&hi).map(|(a, b)| a - b).collect();
        let jac: Vec<Vec<f64>> = jlo
            .iter()
            .zip(&jhi)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        Some(rmse_term(r, &jac))
    }

    /// Breakdown and the gradient of the optimized objective.
    fn evaluate(&self, constants: &[f64], physics_in_grad: bool) -> Option<(LossBreakdown, Vec<f64>)> {
        let u = self.u.with_constants(constants.to_vec());
        let res = self.residual.with_constants(constants.to_vec());
        let data = self.term_against(&u, &self.data.points, &self.data.values)?;
        let residual = self.term_against(&res, &self.cond.interior, &[])?;
        let ic = self.term_against(&u, &self.cond.ic_points, &self.cond.ic_values)?;
        let bc = self.bc_term(&u)?;
        let loss = LossBreakdown::assemble(data.value, residual.value, ic.value, bc.value, self.lambda);
        if loss.is_sentinel() {
            return None;
        }
        let mut grad = data.grad;
        if physics_in_grad {
            for (j, g) in grad.iter_mut().enumerate() {
                *g += self.lambda * (residual.grad[j] + ic.grad[j] + bc.grad[j]);
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        Some((loss, grad))
    }
}

fn objective_value(loss: &LossBreakdown, physics: bool) -> f64 {
    if physics {
        loss.total
    } else {
        loss.data_loss
    }
}

fn breakdown(obj: &Objective<'_>, constants: &[f64]) -> LossBreakdown {
    let u = obj.u.with_constants(constants.to_vec());
    let res = obj.residual.with_constants(constants.to_vec());
    let data = data_loss(&u, obj.data);
    let (residual, ic, bc) = physics_terms(&u, &res, obj.cond);
    LossBreakdown::assemble(data, residual, ic, bc, obj.lambda)
}

/// Tunes the constants by nonlinear conjugate gradients. Each step tries the
/// current step length along the search direction, then the secant minimizer
/// of the squared objective along that line, and keeps the better point if it
/// improves. A failed step halves the step length and restarts from steepest
/// descent. The returned tree never has a larger objective than the input.
pub fn optimize_constants(
    u: &ExprTree,
    task: &TaskSpec,
    data: &Dataset,
    cond: &ConditionSet,
    lambda_phys: f64,
    cfg: &ConstOptConfig,
) -> ExprTree {
    let obj = Objective::new(u, task, data, cond, lambda_phys);
    run_optimizer(&obj, cfg).0
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn step_to(c: &[f64], dir: &[f64], alpha: f64) -> Vec<f64> {
    c.iter().zip(dir).map(|(x, d)| x + alpha * d).collect()
}

fn run_optimizer(obj: &Objective<'_>, cfg: &ConstOptConfig) -> (ExprTree, LossBreakdown) {
    let physics = cfg.include_physics_terms;
    let mut c = obj.u.constants.clone();
    if c.is_empty() || cfg.max_steps == 0 {
        return (obj.u.clone(), breakdown(obj, &c));
    }
    let Some((mut loss, mut grad)) = obj.evaluate(&c, physics) else {
        return (obj.u.clone(), breakdown(obj, &c));
    };
    let mut alpha = cfg.learning_rate;
    let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
    for _ in 0..cfg.max_steps {
        let f0 = objective_value(&loss, physics);
        let mut slope0 = dot(&grad, &dir);
        if slope0 >= 0.0 {
            dir = grad.iter().map(|g| -g).collect();
            slope0 = -dot(&grad, &grad);
        }
        if f0 == 0.0 || slope0.abs() < 1e-300 || alpha < 1e-300 {
            break;
        }
        let mut best: Option<(Vec<f64>, LossBreakdown, Vec<f64>, f64)> = None;
        if let Some((l1, g1)) = obj.evaluate(&step_to(&c, &dir, alpha), physics) {
            let f1 = objective_value(&l1, physics);
            // Derivatives of the squared objective along the line.
            let s0 = 2.0 * f0 * slope0;
            let s1 = 2.0 * f1 * dot(&g1, &dir);
            if f1 < f0 {
                best = Some((step_to(&c, &dir, alpha), l1, g1, alpha));
            }
            if s1 > s0 {
                let star = alpha * s0 / (s0 - s1);
                if star.is_finite() && star > 0.0 && star != alpha {
                    let trial = step_to(&c, &dir, star);
                    if let Some((l2, g2)) = obj.evaluate(&trial, physics) {
                        let f2 = objective_value(&l2, physics);
                        let bar = best.as_ref().map_or(f0, |b| objective_value(&b.1, physics));
                        if f2 < bar {
                            best = Some((trial, l2, g2, star));
                        }
                    }
                }
            }
        }
        match best {
            Some((next, l, g, taken)) => {
                let beta = (dot(&g, &g) - dot(&g, &grad)) / dot(&grad, &grad);
                let beta = if beta.is_finite() { beta.max(0.0) } else { 0.0 };
                dir = g.iter().zip(&dir).map(|(gi, di)| -gi + beta * di).collect();
                c = next;
                loss = l;
                grad = g;
                alpha = if taken == alpha { 2.0 * alpha } else { taken };
            }
            None => {
                alpha *= 0.5;
                dir = grad.iter().map(|g| -g).collect();
            }
        }
    }
    (obj.u.with_constants(c), loss)
}

/// Constant tuning followed by the full loss breakdown of the tuned tree.
pub fn factorial_cost(
    u: &ExprTree,
    task: &TaskSpec,
    data: &Dataset,
    cond: &ConditionSet,
    cfg: &FitnessConfig,
) -> (LossBreakdown, ExprTree) {
    let obj = Objective::new(u, task, data, cond, cfg.lambda_phys);
    let (tree, loss) = run_optimizer(&obj, &cfg.const_opt);
    (loss, tree)
}


/// Mean squared error against a reference grid, evaluated in chunks.
pub fn test_mse(u: &ExprTree, grid: &SolutionGrid) -> f64 {
    const CHUNK: usize = 8192;
    let mut batch = PointBatch::with_capacity(CHUNK);
    let mut sum = 0.0;
    let mut start = 0;
    while start < grid.len() {
        grid.fill_batch(start, CHUNK, &mut batch);
        let Some(pred) = eval_batch(u, &batch) else {
            return SENTINEL_COST;
        };
        let truth = &grid.values[start..start + batch.len()];
        sum += pred.iter().zip(truth).map(|(p, y)| (p - y) * (p - y)).sum::<f64>();
        start += batch.len();
    }
    let mse = sum / grid.len() as f64;
    if mse.is_finite() {
        mse
    } else {
        SENTINEL_COST
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Provenance;
    use crate::exprcalc::{parse_expr, Point, Var};
    use crate::pdefam::{IcComponent, IcMode, IcSpec};

    fn adv_task() -> TaskSpec {
        let ic = IcSpec {
            mode: IcMode::SineSum,
            components: vec![IcComponent {
                amplitude: 1.0,
                wavenumber_index: 1,
                phase: 0.0,
            }],
        };
        TaskSpec::new(crate::pdefam::Family::Adv1D, vec![0.4], ic, 0).unwrap()
    }

    fn dataset(points: &[(f64, f64)], values: Vec<f64>) -> Dataset {
        let pts: Vec<Point> = points
            .iter()
            .map(|&(x, t)| Point::new().with(Var::X, x).with(Var::T, t))
            .collect();
        Dataset {
            task_id: 0,
            provenance: Provenance::Analytic,
            noise_sigma_frac: 0.0,
            variables: vec![Var::X, Var::T],
            points: PointBatch::from_points(&pts),
            values,
        }
    }

    #[test]
    fn rmse_of_two_records() {
        let d = dataset(&[(1.0, 0.0), (2.0, 0.0)], vec![1.0, 4.0]);
        let u = parse_expr("x").unwrap();
        assert!((data_loss(&u, &d) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_converges_to_mean_level() {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 / 20.0, 0.5)).collect();
        let d = dataset(&pts, vec![3.0; 20]);
        let u = ExprTree::new(crate::exprcalc::Node::Const(0), vec![1.0]);
        let cfg = ConstOptConfig {
            include_physics_terms: false,
            ..Default::default()
        };
        let tuned = optimize_constants(&u, &adv_task(), &d, &ConditionSet::default(), 0.1, &cfg);
        assert!((tuned.constants[0] - 3.0).abs() <= 1e-3, "{:?}", tuned.constants);
    }

    #[test]
    fn slope_through_origin() {
        let pts: Vec<(f64, f64)> = (1..=20).map(|i| (i as f64 / 20.0, 0.0)).collect();
        let vals = pts.iter().map(|p| 2.0 * p.0).collect();
        let d = dataset(&pts, vals);
        let u = parse_expr("1*x").unwrap();
        let cfg = ConstOptConfig {
            include_physics_terms: false,
            ..Default::default()
        };
        let tuned = optimize_constants(&u, &adv_task(), &d, &ConditionSet::default(), 0.1, &cfg);
        assert!((tuned.constants[0] - 2.0).abs() <= 1e-3, "{:?}", tuned.constants);
    }

    #[test]
    fn poisoned_tree_costs_sentinel() {
        let d = dataset(&[(0.5, 0.1)], vec![0.0]);
        let u = parse_expr("log(0 - 1 - x*x)").unwrap();
        let (loss, _) = factorial_cost(&u, &adv_task(), &d, &ConditionSet::default(), &FitnessConfig::default());
        assert_eq!(loss.total, SENTINEL_COST);
    }

    #[test]
    fn empty_condition_sets_cost_nothing() {
        let u = parse_expr("sin(x)").unwrap();
        assert_eq!(physics_loss(&u, &adv_task(), &ConditionSet::default()), (0.0, 0.0, 0.0));
    }
}

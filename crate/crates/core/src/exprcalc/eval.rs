use super::tree::{BinaryOp, ExprTree, Node, Point, UnaryOp, Var};

/// Column-major set of points, one column per variable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointBatch {
    cols: [Vec<f64>; 4],
    len: usize,
}

impl PointBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            cols: std::array::from_fn(|_| Vec::with_capacity(n)),
            len: 0,
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Self {
        let mut b = Self::new();
        for p in points {
            b.push(p);
        }
        b
    }

    pub fn push(&mut self, p: &Point) {
        for v in Var::ALL {
            self.cols[v.index()].push(p.get(v));
        }
        self.len += 1;
    }

    pub fn clear(&mut self) {
        for c in &mut self.cols {
            c.clear();
        }
        self.len = 0;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn col(&self, v: Var) -> &[f64] {
        &self.cols[v.index()]
    }

    pub fn point(&self, i: usize) -> Point {
        let mut p = Point::new();
        for v in Var::ALL {
            p.set(v, self.cols[v.index()][i]);
        }
        p
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len).map(|i| self.point(i))
    }
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Evaluates the tree at one point. `None` is the invalid-value marker: some
/// intermediate result was non-finite (log of a non-positive value, overflow, ...).
pub fn eval(tree: &ExprTree, point: &Point) -> Option<f64> {
    eval_node(&tree.root, &tree.constants, point)
}

fn eval_node(node: &Node, consts: &[f64], p: &Point) -> Option<f64> {
    let v = match node {
        Node::Var(v) => p.get(*v),
        Node::Const(i) => consts[*i],
        Node::Lit(x) => *x,
        Node::Unary(op, a) => op.apply(eval_node(a, consts, p)?),
        Node::Binary(op, a, b) => op.apply(eval_node(a, consts, p)?, eval_node(b, consts, p)?),
    };
    v.is_finite().then_some(v)
}

/// Evaluates the tree on every point of the batch. Any non-finite intermediate
/// at any point poisons the whole batch.
pub fn eval_batch(tree: &ExprTree, batch: &PointBatch) -> Option<Vec<f64>> {
    eval_batch_node(&tree.root, &tree.constants, batch)
}

fn eval_batch_node(node: &Node, consts: &[f64], batch: &PointBatch) -> Option<Vec<f64>> {
    let out = match node {
        Node::Var(v) => batch.col(*v).to_vec(),
        Node::Const(i) => vec![consts[*i]; batch.len()],
        Node::Lit(x) => vec![*x; batch.len()],
        Node::Unary(op, a) => {
            let mut a = eval_batch_node(a, consts, batch)?;
            let op = *op;
            a.iter_mut().for_each(|x| *x = op.apply(*x));
            a
        }
        Node::Binary(op, a, b) => {
            let mut a = eval_batch_node(a, consts, batch)?;
            let b = eval_batch_node(b, consts, batch)?;
            let op = *op;
            a.iter_mut().zip(&b).for_each(|(x, y)| *x = op.apply(*x, *y));
            a
        }
    };
    all_finite(&out).then_some(out)
}

/// Value and sparse constant gradient columns, sorted by constant index.
struct Dual {
    value: Vec<f64>,
    grads: Vec<(usize, Vec<f64>)>,
}

impl Dual {
    fn map_grads(mut self, scale: &[f64]) -> Self {
        for (_, g) in &mut self.grads {
            g.iter_mut().zip(scale).for_each(|(g, s)| *g *= s);
        }
        self
    }
}

/// Merges `a_scale * da + b_scale * db` per constant. A `None` scale means 1.
fn combine(
    da: Vec<(usize, Vec<f64>)>,
    a_scale: Option<&[f64]>,
    db: Vec<(usize, Vec<f64>)>,
    b_scale: Option<&[f64]>,
    b_sign: f64,
) -> Vec<(usize, Vec<f64>)> {
    let scale_a = |mut g: Vec<f64>| {
        if let Some(s) = a_scale {
            g.iter_mut().zip(s).for_each(|(g, s)| *g *= s);
        }
        g
    };
    let scale_b = |mut g: Vec<f64>| {
        match b_scale {
            Some(s) => g.iter_mut().zip(s).for_each(|(g, s)| *g *= b_sign * s),
            None if b_sign != 1.0 => g.iter_mut().for_each(|g| *g *= b_sign),
            None => {}
        }
        g
    };
    let mut out = Vec::with_capacity(da.len() + db.len());
    let mut ia = da.into_iter().peekable();
    let mut ib = db.into_iter().peekable();
    loop {
        match (ia.peek(), ib.peek()) {
            (Some((i, _)), Some((j, _))) if i == j => {
                let (i, ga) = ia.next().unwrap();
                let (_, gb) = ib.next().unwrap();
                let mut g = scale_a(ga);
                let gb = scale_b(gb);
                g.iter_mut().zip(&gb).for_each(|(x, y)| *x += y);
                out.push((i, g));
            }
            (Some((i, _)), Some((j, _))) if i < j => {
                let (i, g) = ia.next().unwrap();
                out.push((i, scale_a(g)));
            }
            (Some(_), Some(_)) | (None, Some(_)) => {
                let (j, g) = ib.next().unwrap();
                out.push((j, scale_b(g)));
            }
            (Some(_), None) => {
                let (i, g) = ia.next().unwrap();
                out.push((i, scale_a(g)));
            }
            (None, None) => break,
        }
    }
    out
}

fn dual_node(node: &Node, consts: &[f64], batch: &PointBatch) -> Option<Dual> {
    let n = batch.len();
    let d = match node {
        Node::Var(v) => Dual {
            value: batch.col(*v).to_vec(),
            grads: Vec::new(),
        },
        Node::Const(i) => Dual {
            value: vec![consts[*i]; n],
            grads: vec![(*i, vec![1.0; n])],
        },
        Node::Lit(x) => Dual {
            value: vec![*x; n],
            grads: Vec::new(),
        },
        Node::Unary(op, a) => {
            let a = dual_node(a, consts, batch)?;
            let value: Vec<f64> = a.value.iter().map(|&x| op.apply(x)).collect();
            let slope: Vec<f64> = match op {
                UnaryOp::Neg => vec![-1.0; n],
                UnaryOp::Sin => a.value.iter().map(|x| x.cos()).collect(),
                UnaryOp::Cos => a.value.iter().map(|x| -x.sin()).collect(),
                UnaryOp::Exp => value.clone(),
                UnaryOp::Log => a.value.iter().map(|x| 1.0 / x).collect(),
            };
            Dual { value, grads: a.grads }.map_grads(&slope)
        }
        Node::Binary(op, a, b) => {
            let a = dual_node(a, consts, batch)?;
            let b = dual_node(b, consts, batch)?;
            let value: Vec<f64> = a
                .value
                .iter()
                .zip(&b.value)
                .map(|(&x, &y)| op.apply(x, y))
                .collect();
            let grads = match op {
                BinaryOp::Add => combine(a.grads, None, b.grads, None, 1.0),
                BinaryOp::Sub => combine(a.grads, None, b.grads, None, -1.0),
                BinaryOp::Mul => combine(a.grads, Some(&b.value), b.grads, Some(&a.value), 1.0),
                BinaryOp::Div => {
                    let inv_b: Vec<f64> = b.value.iter().map(|y| 1.0 / y).collect();
                    let q_over_b: Vec<f64> =
                        value.iter().zip(&inv_b).map(|(q, ib)| q * ib).collect();
                    combine(a.grads, Some(&inv_b), b.grads, Some(&q_over_b), -1.0)
                }
            };
            Dual { value, grads }
        }
    };
    all_finite(&d.value).then_some(d)
}

/// Value and dense constant gradient (`grads[j][k]` = ∂value_k/∂c_j) over a batch.
/// `None` when the value or any gradient entry is non-finite.
pub fn eval_batch_with_grad(tree: &ExprTree, batch: &PointBatch) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = dual_node(&tree.root, &tree.constants, batch)?;
    let n = batch.len();
    let mut dense = vec![Vec::new(); tree.constants.len()];
    for (i, g) in d.grads {
        if !all_finite(&g) {
            return None;
        }
        dense[i] = g;
    }
    for g in &mut dense {
        if g.is_empty() {
            *g = vec![0.0; n];
        }
    }
    Some((d.value, dense))
}

/// Gradient of the tree's value with respect to each constant at one point.
pub fn grad_constants(tree: &ExprTree, point: &Point) -> Option<Vec<f64>> {
    let batch = PointBatch::from_points([point]);
    let (_, grads) = eval_batch_with_grad(tree, &batch)?;
    Some(grads.into_iter().map(|g| g[0]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprcalc::parse_expr;
    use std::f64::consts::PI;

    fn pt(x: f64, t: f64) -> Point {
        Point::new().with(Var::X, x).with(Var::T, t)
    }

    #[test]
    fn burgers_expression_at_origin() {
        let tree = parse_expr("0.014*(t - x) + 0.024").unwrap();
        assert!((eval(&tree, &pt(0.0, 0.0)).unwrap() - 0.024).abs() < 1e-15);
    }

    #[test]
    fn taylor_green_peak() {
        let tree = parse_expr(&format!(
            "sin(2*{PI}*x)*sin(2*{PI}*y)*exp(-8*{PI}*{PI}*0.05*t)"
        ))
        .unwrap();
        let p = Point::new().with(Var::X, 0.25).with(Var::Y, 0.25);
        assert!((eval(&tree, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_of_zero_is_invalid() {
        let tree = parse_expr("log(x)").unwrap();
        assert_eq!(eval(&tree, &pt(0.0, 0.0)), None);
        assert_eq!(eval(&tree, &pt(-1.0, 0.0)), None);
    }

    #[test]
    fn poisoned_intermediate_poisons_result() {
        // exp(log(0)) would be 0.0 in plain IEEE arithmetic
        let tree = parse_expr("exp(log(x))").unwrap();
        assert_eq!(eval(&tree, &pt(0.0, 0.0)), None);
        let batch = PointBatch::from_points(&[pt(1.0, 0.0), pt(0.0, 0.0)]);
        assert_eq!(eval_batch(&tree, &batch), None);
    }

    #[test]
    fn batch_matches_scalar() {
        let tree = parse_expr("sin(x*1.3 - t) + exp(0.2*x)*t").unwrap();
        let pts: Vec<Point> = (0..17).map(|i| pt(i as f64 / 16.0, 0.1 * i as f64)).collect();
        let batch = PointBatch::from_points(&pts);
        let vals = eval_batch(&tree, &batch).unwrap();
        for (p, v) in pts.iter().zip(vals) {
            assert_eq!(eval(&tree, p).unwrap(), v);
        }
    }

    #[test]
    fn constant_gradient_of_linear_term() {
        let tree = parse_expr("1*x").unwrap();
        assert_eq!(grad_constants(&tree, &pt(3.0, 0.0)).unwrap(), vec![3.0]);
    }

    #[test]
    fn no_constants_gives_empty_gradient() {
        let tree = parse_expr("x*t").unwrap();
        assert!(grad_constants(&tree, &pt(3.0, 1.0)).unwrap().is_empty());
    }

    #[test]
    fn shared_constant_gradient_accumulates() {
        // c0*x + c0*x has the same constant twice after a manual build
        let c = Node::Const(0);
        let term = Node::binary(BinaryOp::Mul, c, Node::Var(Var::X));
        let tree = ExprTree::new(Node::binary(BinaryOp::Add, term.clone(), term), vec![0.5]);
        assert_eq!(grad_constants(&tree, &pt(2.0, 0.0)).unwrap(), vec![4.0]);
    }

    #[test]
    fn quotient_gradient() {
        // d/dc (x / c) = -x / c^2
        let tree = ExprTree::new(
            Node::binary(BinaryOp::Div, Node::Var(Var::X), Node::Const(0)),
            vec![2.0],
        );
        let g = grad_constants(&tree, &pt(3.0, 0.0)).unwrap();
        assert!((g[0] + 0.75).abs() < 1e-15);
    }
}

use super::tree::{BinaryOp, ExprTree, Node, UnaryOp, Var};

fn lit_value(n: &Node) -> Option<f64> {
    match n {
        Node::Lit(x) => Some(*x),
        _ => None,
    }
}

// Builders that fold literal-only subtrees. Multiplying by a literal one is
// dropped since it is an exact identity.

pub(crate) fn add(a: Node, b: Node) -> Node {
    match (lit_value(&a), lit_value(&b)) {
        (Some(x), Some(y)) => Node::Lit(x + y),
        _ => Node::binary(BinaryOp::Add, a, b),
    }
}

pub(crate) fn sub(a: Node, b: Node) -> Node {
    match (lit_value(&a), lit_value(&b)) {
        (Some(x), Some(y)) => Node::Lit(x - y),
        _ => Node::binary(BinaryOp::Sub, a, b),
    }
}

pub(crate) fn mul(a: Node, b: Node) -> Node {
    match (lit_value(&a), lit_value(&b)) {
        (Some(x), Some(y)) => Node::Lit(x * y),
        (Some(x), None) if x == 1.0 => b,
        (None, Some(y)) if y == 1.0 => a,
        _ => Node::binary(BinaryOp::Mul, a, b),
    }
}

pub(crate) fn div(a: Node, b: Node) -> Node {
    match (lit_value(&a), lit_value(&b)) {
        (Some(x), Some(y)) if y != 0.0 => Node::Lit(x / y),
        (None, Some(y)) if y == 1.0 => a,
        _ => Node::binary(BinaryOp::Div, a, b),
    }
}

pub(crate) fn neg(a: Node) -> Node {
    match a {
        Node::Lit(x) => Node::Lit(-x),
        Node::Unary(UnaryOp::Neg, inner) => *inner,
        a => Node::unary(UnaryOp::Neg, a),
    }
}

fn un(op: UnaryOp, a: Node) -> Node {
    match lit_value(&a) {
        Some(x) if op.apply(x).is_finite() => Node::Lit(op.apply(x)),
        _ => Node::unary(op, a),
    }
}

/// Sum of optional terms; `None` stands for a structural zero.
fn opt_add(a: Option<Node>, b: Option<Node>) -> Option<Node> {
    match (a, b) {
        (Some(a), Some(b)) => Some(add(a, b)),
        (a, b) => a.or(b),
    }
}

fn opt_sub(a: Option<Node>, b: Option<Node>) -> Option<Node> {
    match (a, b) {
        (Some(a), Some(b)) => Some(sub(a, b)),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(neg(b)),
        (None, None) => None,
    }
}

/// Partial derivative of `node` with respect to `var`. `None` means the
/// subtree does not depend on `var`.
fn derive(node: &Node, var: Var) -> Option<Node> {
    match node {
        Node::Var(v) => (*v == var).then_some(Node::Lit(1.0)),
        Node::Const(_) | Node::Lit(_) => None,
        Node::Unary(op, a) => {
            let da = derive(a, var)?;
            let a = (**a).clone();
            Some(match op {
                UnaryOp::Neg => neg(da),
                UnaryOp::Sin => mul(un(UnaryOp::Cos, a), da),
                UnaryOp::Cos => mul(neg(un(UnaryOp::Sin, a)), da),
                UnaryOp::Exp => mul(un(UnaryOp::Exp, a), da),
                UnaryOp::Log => div(da, a),
            })
        }
        Node::Binary(op, a, b) => {
            let da = derive(a, var);
            let db = derive(b, var);
            match op {
                BinaryOp::Add => opt_add(da, db),
                BinaryOp::Sub => opt_sub(da, db),
                BinaryOp::Mul => opt_add(
                    da.map(|da| mul(da, (**b).clone())),
                    db.map(|db| mul((**a).clone(), db)),
                ),
                BinaryOp::Div => {
                    // (a/b)' = a'/b - a*b'/(b*b)
                    let first = da.map(|da| div(da, (**b).clone()));
                    let second = db.map(|db| {
                        div(
                            mul((**a).clone(), db),
                            mul((**b).clone(), (**b).clone()),
                        )
                    });
                    opt_sub(first, second)
                }
            }
        }
    }
}

/// Exact symbolic partial derivative of the given order. Constants are shared
/// with the input tree, so the result can be evaluated and differentiated with
/// respect to them like any other tree.
pub fn differentiate(tree: &ExprTree, var: Var, order: u32) -> ExprTree {
    assert!(order >= 1, "derivative order must be positive");
    let mut root = tree.root.clone();
    for _ in 0..order {
        root = derive(&root, var).unwrap_or(Node::Lit(0.0));
    }
    ExprTree {
        root,
        constants: tree.constants.clone(),
    }
}

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Independent variable of a PDE solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Var {
    X,
    Y,
    Z,
    T,
}

impl Var {
    pub const ALL: [Var; 4] = [Var::X, Var::Y, Var::Z, Var::T];

    pub fn index(self) -> usize {
        match self {
            Var::X => 0,
            Var::Y => 1,
            Var::Z => 2,
            Var::T => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::Z => "z",
            Var::T => "t",
        }
    }

    pub fn from_name(name: &str) -> Option<Var> {
        match name {
            "x" => Some(Var::X),
            "y" => Some(Var::Y),
            "z" => Some(Var::Z),
            "t" => Some(Var::T),
            _ => None,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A coordinate in the space-time domain. Variables not used by a task stay at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    coords: [f64; 4],
}

impl Point {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: &[(Var, f64)]) -> Self {
        let mut p = Self::default();
        for &(v, value) in pairs {
            p.set(v, value);
        }
        p
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.set(var, value);
        self
    }

    #[inline]
    pub fn get(&self, var: Var) -> f64 {
        self.coords[var.index()]
    }

    #[inline]
    pub fn set(&mut self, var: Var, value: f64) {
        self.coords[var.index()] = value;
    }
}

/// Unary operators. Search libraries only use `Sin`, `Exp` and `Log`;
/// `Neg` and `Cos` appear in derivative trees and parsed text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
}

impl UnaryOp {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Neg => -a,
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Exp => a.exp(),
            UnaryOp::Log => a.ln(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
        }
    }
}

/// Binary operators. `Div` only appears in derivative trees and parsed text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }
}

/// Expression node. `Const` refers to a tunable entry of the owning tree's
/// constant vector, `Lit` is a fixed literal (derivative trees, residuals).
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Var(Var),
    Const(usize),
    Lit(f64),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
}

impl Node {
    pub fn unary(op: UnaryOp, a: Node) -> Node {
        Node::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Node, b: Node) -> Node {
        Node::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn size(&self) -> usize {
        match self {
            Node::Var(_) | Node::Const(_) | Node::Lit(_) => 1,
            Node::Unary(_, a) => 1 + a.size(),
            Node::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Var(_) | Node::Const(_) | Node::Lit(_) => 1,
            Node::Unary(_, a) => 1 + a.depth(),
            Node::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn contains_var(&self, var: Var) -> bool {
        match self {
            Node::Var(v) => *v == var,
            Node::Const(_) | Node::Lit(_) => false,
            Node::Unary(_, a) => a.contains_var(var),
            Node::Binary(_, a, b) => a.contains_var(var) || b.contains_var(var),
        }
    }

    pub(crate) fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Node::Var(v) => {
                out.insert(*v);
            }
            Node::Const(_) | Node::Lit(_) => {}
            Node::Unary(_, a) => a.collect_vars(out),
            Node::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub(crate) fn max_const_index(&self) -> Option<usize> {
        match self {
            Node::Const(i) => Some(*i),
            Node::Var(_) | Node::Lit(_) => None,
            Node::Unary(_, a) => a.max_const_index(),
            Node::Binary(_, a, b) => match (a.max_const_index(), b.max_const_index()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    /// Renumbers constants in preorder of first appearance.
    pub(crate) fn renumber_constants(&mut self, map: &mut Vec<Option<usize>>, next: &mut usize) {
        match self {
            Node::Const(i) => {
                if map.len() <= *i {
                    map.resize(*i + 1, None);
                }
                let new = *map[*i].get_or_insert_with(|| {
                    let n = *next;
                    *next += 1;
                    n
                });
                *i = new;
            }
            Node::Var(_) | Node::Lit(_) => {}
            Node::Unary(_, a) => a.renumber_constants(map, next),
            Node::Binary(_, a, b) => {
                a.renumber_constants(map, next);
                b.renumber_constants(map, next);
            }
        }
    }
}

/// A closed-form candidate solution: a node tree plus the values of its tunable constants.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprTree {
    pub root: Node,
    pub constants: Vec<f64>,
}

impl ExprTree {
    /// Panics if the root references a constant outside `constants`.
    pub fn new(root: Node, constants: Vec<f64>) -> Self {
        if let Some(i) = root.max_const_index() {
            assert!(
                i < constants.len(),
                "constant index {i} out of range ({} constants)",
                constants.len()
            );
        }
        Self { root, constants }
    }

    pub fn var(v: Var) -> Self {
        Self::new(Node::Var(v), Vec::new())
    }

    pub fn num_constants(&self) -> usize {
        self.constants.len()
    }

    pub fn size(&self) -> usize {
        self.root.size()
    }

    pub fn variables(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.root.collect_vars(&mut out);
        out
    }

    pub fn with_constants(&self, constants: Vec<f64>) -> Self {
        assert_eq!(constants.len(), self.constants.len());
        Self {
            root: self.root.clone(),
            constants,
        }
    }

    /// Drops unreferenced constants and renumbers the rest in preorder.
    pub fn compact_constants(mut self) -> Self {
        let mut map = Vec::new();
        let mut next = 0;
        self.root.renumber_constants(&mut map, &mut next);
        let mut constants = vec![0.0; next];
        for (old, new) in map.iter().enumerate() {
            if let Some(new) = new {
                constants[*new] = self.constants[old];
            }
        }
        self.constants = constants;
        self
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::to_infix(self))
    }
}

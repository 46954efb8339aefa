//! Expression trees: evaluation on points, exact symbolic differentiation with
//! respect to the independent variables, and constant gradients.

mod diff;
mod eval;
mod parse;
mod tree;

pub use diff::differentiate;
pub(crate) use diff::{add, mul, sub};
pub use eval::{eval, eval_batch, eval_batch_with_grad, grad_constants, PointBatch};
pub use parse::{parse_expr, to_infix, ParseError};
pub use tree::{BinaryOp, ExprTree, Node, Point, UnaryOp, Var};

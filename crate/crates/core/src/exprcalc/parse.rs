//! Infix text form of expression trees.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | var | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | log
//! var     := x | y | z | t
//! ```
//!
//! `×`, `·` and `−` are accepted as aliases. Numeric literals become tunable
//! constants of the parsed tree.

use super::tree::{BinaryOp, ExprTree, Node, UnaryOp, Var};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown symbol `{symbol}` at position {position}")]
    UnknownSymbol { position: usize, symbol: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '+' => {
                out.push((pos, Tok::Plus));
                i += 1;
            }
            '-' | '\u{2212}' => {
                out.push((pos, Tok::Minus));
                i += 1;
            }
            '*' | '\u{00d7}' | '\u{00b7}' => {
                out.push((pos, Tok::Star));
                i += 1;
            }
            '/' | '\u{00f7}' => {
                out.push((pos, Tok::Slash));
                i += 1;
            }
            '(' => {
                out.push((pos, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((pos, Tok::RParen));
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                    i += 1;
                }
                if i < chars.len() && matches!(chars[i].1, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && matches!(chars[j].1, '+' | '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].1.is_ascii_digit() {
                        while j < chars.len() && chars[j].1.is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let s: String = chars[start..i].iter().map(|(_, c)| c).collect();
                let v = s.parse::<f64>().map_err(|_| ParseError::Syntax {
                    position: pos,
                    message: format!("malformed number `{s}`"),
                })?;
                out.push((pos, Tok::Num(v)));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().map(|(_, c)| c).collect();
                out.push((pos, Tok::Ident(s)));
            }
            other => {
                return Err(ParseError::UnknownSymbol {
                    position: pos,
                    symbol: other.to_string(),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    constants: Vec<f64>,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            position: self.here(),
            message: message.into(),
        })
    }

    fn constant(&mut self, v: f64) -> Node {
        self.constants.push(v);
        Node::Const(self.constants.len() - 1)
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinaryOp::Add,
                Some(Tok::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinaryOp::Mul,
                Some(Tok::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            // a negated literal is a single negative constant
            if let Some(Tok::Num(v)) = self.peek() {
                let v = *v;
                self.pos += 1;
                return Ok(self.constant(-v));
            }
            let inner = self.unary()?;
            return Ok(Node::unary(UnaryOp::Neg, inner));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let Some((position, tok)) = self.toks.get(self.pos).cloned() else {
            return self.err("unexpected end of input");
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(self.constant(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some(v) = Var::from_name(&name) {
                    return Ok(Node::Var(v));
                }
                let op = match name.as_str() {
                    "sin" => UnaryOp::Sin,
                    "cos" => UnaryOp::Cos,
                    "exp" => UnaryOp::Exp,
                    "log" | "ln" => UnaryOp::Log,
                    _ => {
                        return Err(ParseError::UnknownSymbol {
                            position,
                            symbol: name,
                        })
                    }
                };
                if self.peek() != Some(&Tok::LParen) {
                    return self.err(format!("expected `(` after `{name}`"));
                }
                self.pos += 1;
                let arg = self.expr()?;
                self.expect_rparen()?;
                Ok(Node::unary(op, arg))
            }
            _ => {
                self.pos -= 1;
                self.err("expected a number, variable, function or `(`")
            }
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            self.err("expected `)`")
        }
    }
}

/// Parses infix text into an expression tree.
pub fn parse_expr(text: &str) -> Result<ExprTree, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        constants: Vec::new(),
    };
    let root = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(ExprTree::new(root, p.constants))
}

fn precedence(node: &Node, consts: &[f64]) -> u8 {
    match node {
        Node::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
        Node::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
        Node::Unary(UnaryOp::Neg, _) => 3,
        Node::Const(i) if consts[*i].is_sign_negative() => 3,
        Node::Lit(x) if x.is_sign_negative() => 3,
        _ => 4,
    }
}

fn number(out: &mut String, v: f64) {
    // Debug formatting is the shortest text that round-trips exactly.
    if v.is_sign_negative() {
        out.push_str(&format!("(-{:?})", -v));
    } else {
        out.push_str(&format!("{v:?}"));
    }
}

fn write_node(node: &Node, consts: &[f64], out: &mut String) {
    let wrap = |child: &Node, parens: bool, out: &mut String| {
        if parens {
            out.push('(');
            write_node(child, consts, out);
            out.push(')');
        } else {
            write_node(child, consts, out);
        }
    };
    match node {
        Node::Var(v) => out.push_str(v.name()),
        Node::Const(i) => number(out, consts[*i]),
        Node::Lit(x) => number(out, *x),
        Node::Unary(UnaryOp::Neg, a) => {
            out.push('-');
            let numeric = matches!(**a, Node::Const(_) | Node::Lit(_));
            wrap(a, numeric || precedence(a, consts) <= 3, out);
        }
        Node::Unary(op, a) => {
            out.push_str(op.name());
            wrap(a, true, out);
        }
        Node::Binary(op, a, b) => {
            let level = match op {
                BinaryOp::Add | BinaryOp::Sub => 1,
                BinaryOp::Mul | BinaryOp::Div => 2,
            };
            // the right operand is parenthesized at equal precedence so the
            // printed text re-parses to the same tree shape
            wrap(a, precedence(a, consts) < level, out);
            if level == 1 {
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
            } else {
                out.push_str(op.symbol());
            }
            let pb = precedence(b, consts);
            wrap(b, pb <= level || (level == 2 && pb == 3), out);
        }
    }
}

/// Parenthesized infix text. Constants are printed exactly (shortest
/// round-trip decimal form), so `parse_expr(to_infix(t))` evaluates bitwise
/// identically to `t`.
pub fn to_infix(tree: &ExprTree) -> String {
    let mut s = String::new();
    write_node(&tree.root, &tree.constants, &mut s);
    s
}

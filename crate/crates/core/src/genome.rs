//! Unified integer chromosome shared by every task of a PDE family.
//!
//! A chromosome is one main Karva expression followed by `num_adfs`
//! automatically defined functions (ADFs), each a fixed `head + tail` block.
//! Gene values fall into four ranges:
//!
//! | range      | meaning                              |
//! |------------|--------------------------------------|
//! | `[0, A)`   | function symbol                      |
//! | `[A, B)`   | ADF call                             |
//! | `[B, C)`   | terminal (variable or constant slot) |
//! | `[C, D)`   | ADF input argument                   |
//!
//! A gene is turned into a task-specific symbol by scaling its offset inside
//! its range to the number of symbols of that kind the task defines.

use crate::exprcalc::{BinaryOp, ExprTree, Node, UnaryOp, Var};
use crate::pdefam::TaskSpec;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Search-library function symbols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Function {
    Add,
    Sub,
    Mul,
    Sin,
    Exp,
    Log,
}

impl Function {
    pub fn arity(self) -> usize {
        match self {
            Function::Add | Function::Sub | Function::Mul => 2,
            Function::Sin | Function::Exp | Function::Log => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Function::Add => "+",
            Function::Sub => "-",
            Function::Mul => "*",
            Function::Sin => "sin",
            Function::Exp => "exp",
            Function::Log => "log",
        }
    }

    fn build(self, mut args: Vec<Node>) -> Node {
        debug_assert_eq!(args.len(), self.arity());
        let binary = |op, args: &mut Vec<Node>| {
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            Node::binary(op, a, b)
        };
        match self {
            Function::Add => binary(BinaryOp::Add, &mut args),
            Function::Sub => binary(BinaryOp::Sub, &mut args),
            Function::Mul => binary(BinaryOp::Mul, &mut args),
            Function::Sin => Node::unary(UnaryOp::Sin, args.pop().unwrap()),
            Function::Exp => Node::unary(UnaryOp::Exp, args.pop().unwrap()),
            Function::Log => Node::unary(UnaryOp::Log, args.pop().unwrap()),
        }
    }
}

/// Leaf symbol of a library.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terminal {
    Var(Var),
    /// A tunable constant, initialized to 1.0 on decode.
    Constant,
}

/// Constant slots appended to every generated terminal list.
pub const CONSTANT_SLOTS: usize = 2;

/// Ordered functions and terminals of one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolLibrary {
    pub functions: Vec<Function>,
    pub terminals: Vec<Terminal>,
}

impl SymbolLibrary {
    pub const ADVECTION: [Function; 4] = [Function::Add, Function::Sub, Function::Mul, Function::Sin];
    pub const EXTENDED: [Function; 6] = [
        Function::Add,
        Function::Sub,
        Function::Mul,
        Function::Sin,
        Function::Exp,
        Function::Log,
    ];

    /// Library over `vars` plus the constant slots.
    pub fn new(functions: &[Function], vars: &[Var]) -> Self {
        let mut terminals: Vec<Terminal> = vars.iter().map(|&v| Terminal::Var(v)).collect();
        terminals.extend(std::iter::repeat_n(Terminal::Constant, CONSTANT_SLOTS));
        Self {
            functions: functions.to_vec(),
            terminals,
        }
    }

    pub fn max_arity(&self) -> usize {
        self.functions.iter().map(|f| f.arity()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenomeError {
    #[error("at least one task is required")]
    NoTasks,
    #[error("task {0} has no terminals")]
    NoTerminals(usize),
    #[error("task {0} has no functions")]
    NoFunctions(usize),
    #[error("head length must be at least 1")]
    EmptyHead,
    #[error("gene {gene} outside segment [{lower}, {upper})")]
    OutOfSegment { gene: u32, lower: u32, upper: u32 },
    #[error("chromosome has {found} genes, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("gene {gene} is not legal at position {position}")]
    IllegalGene { position: usize, gene: u32 },
    #[error("library is not part of this encoding space")]
    LibraryMismatch,
}

/// Which block of the chromosome a gene belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Main,
    Adf(usize),
}

/// Layout of the unified chromosome.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub head_len: usize,
    pub tail_len: usize,
    pub num_adfs: usize,
    pub num_adf_args: usize,
    pub bound_a: u32,
    pub bound_b: u32,
    pub bound_c: u32,
    pub bound_d: u32,
    pub max_arity: usize,
    pub per_task_fn_counts: Vec<usize>,
    pub per_task_term_counts: Vec<usize>,
    #[serde(skip)]
    legal: Vec<Vec<u32>>,
}

/// Builds the encoding space shared by `tasks`.
pub fn build_encoding_space(
    tasks: &[TaskSpec],
    head_len: usize,
    num_adfs: usize,
    num_adf_args: usize,
) -> Result<EncodingSpec, GenomeError> {
    let libs: Vec<&SymbolLibrary> = tasks.iter().map(|t| &t.library).collect();
    EncodingSpec::from_libraries(&libs, head_len, num_adfs, num_adf_args)
}

impl EncodingSpec {
    pub fn from_libraries(
        libraries: &[&SymbolLibrary],
        head_len: usize,
        num_adfs: usize,
        num_adf_args: usize,
    ) -> Result<Self, GenomeError> {
        if libraries.is_empty() {
            return Err(GenomeError::NoTasks);
        }
        if head_len == 0 {
            return Err(GenomeError::EmptyHead);
        }
        for (i, lib) in libraries.iter().enumerate() {
            if lib.terminals.is_empty() {
                return Err(GenomeError::NoTerminals(i));
            }
            if lib.functions.is_empty() {
                return Err(GenomeError::NoFunctions(i));
            }
        }
        let per_task_fn_counts: Vec<usize> = libraries.iter().map(|l| l.functions.len()).collect();
        let per_task_term_counts: Vec<usize> = libraries.iter().map(|l| l.terminals.len()).collect();
        let mut max_arity = libraries.iter().map(|l| l.max_arity()).max().unwrap_or(1);
        if num_adfs > 0 {
            // an ADF call is a function node with num_adf_args children
            max_arity = max_arity.max(num_adf_args);
        }
        let max_arity = max_arity.max(1);
        let tail_len = head_len * (max_arity - 1) + 1;
        let bound_a = *per_task_fn_counts.iter().max().unwrap() as u32;
        let bound_b = bound_a + num_adfs as u32;
        let bound_c = bound_b + *per_task_term_counts.iter().max().unwrap() as u32;
        let bound_d = bound_c + num_adf_args as u32;
        let mut spec = Self {
            head_len,
            tail_len,
            num_adfs,
            num_adf_args,
            bound_a,
            bound_b,
            bound_c,
            bound_d,
            max_arity,
            per_task_fn_counts,
            per_task_term_counts,
            legal: Vec::new(),
        };
        spec.legal = (0..spec.genome_len()).map(|p| spec.compute_legal(p)).collect();
        Ok(spec)
    }

    /// Rebuilds derived tables after deserialization.
    pub fn rebuild(mut self) -> Self {
        self.legal = (0..self.genome_len()).map(|p| self.compute_legal(p)).collect();
        self
    }

    pub fn block_len(&self) -> usize {
        self.head_len + self.tail_len
    }

    pub fn genome_len(&self) -> usize {
        (1 + self.num_adfs) * self.block_len()
    }

    pub fn block_of(&self, position: usize) -> Block {
        match position / self.block_len() {
            0 => Block::Main,
            k => Block::Adf(k - 1),
        }
    }

    pub fn is_head(&self, position: usize) -> bool {
        position % self.block_len() < self.head_len
    }

    fn compute_legal(&self, position: usize) -> Vec<u32> {
        let (a, b, c, d) = (self.bound_a, self.bound_b, self.bound_c, self.bound_d);
        match (self.block_of(position), self.is_head(position)) {
            (Block::Main, true) => (0..d).collect(),
            (Block::Main, false) => (b..c).collect(),
            // an ADF may only call ADFs with a strictly greater index
            (Block::Adf(i), true) => (0..a)
                .chain(a + i as u32 + 1..b)
                .chain(b..d)
                .collect(),
            (Block::Adf(_), false) => (b..d).collect(),
        }
    }

    /// Sorted legal gene values at `position`.
    pub fn legal_genes(&self, position: usize) -> &[u32] {
        &self.legal[position]
    }

    pub fn is_legal(&self, position: usize, gene: u32) -> bool {
        self.legal[position].binary_search(&gene).is_ok()
    }

    /// Maps an arbitrary integer into the legal set of `position`. Legal values
    /// are kept; others are reduced modulo the size of the legal set.
    pub fn repair_gene(&self, position: usize, value: i64) -> u32 {
        let legal = &self.legal[position];
        if value >= 0 && value <= u32::MAX as i64 && self.is_legal(position, value as u32) {
            return value as u32;
        }
        let offset = (value - legal[0] as i64).rem_euclid(legal.len() as i64);
        legal[offset as usize]
    }

    fn task_index(&self, lib: &SymbolLibrary) -> Result<(usize, usize), GenomeError> {
        let (nf, nt) = (lib.functions.len(), lib.terminals.len());
        if nf == 0 || nt == 0 || nf > self.bound_a as usize || nt > (self.bound_c - self.bound_b) as usize {
            return Err(GenomeError::LibraryMismatch);
        }
        if self.num_adfs > 0 && lib.max_arity() > self.max_arity {
            return Err(GenomeError::LibraryMismatch);
        }
        Ok((nf, nt))
    }
}

/// Maps a gene in `[lower, upper)` to an index in `[0, count)` by
/// `floor((gene - lower) / (upper - lower) * count)`.
pub fn scale_gene(gene: u32, lower: u32, upper: u32, count: usize) -> Result<usize, GenomeError> {
    if gene < lower || gene >= upper || count == 0 {
        return Err(GenomeError::OutOfSegment { gene, lower, upper });
    }
    let offset = (gene - lower) as u64;
    let width = (upper - lower) as u64;
    Ok((offset * count as u64 / width) as usize)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Chromosome {
    pub genes: Vec<u32>,
}

impl Chromosome {
    pub fn new(genes: Vec<u32>) -> Self {
        Self { genes }
    }

    pub fn validate(&self, spec: &EncodingSpec) -> Result<(), GenomeError> {
        if self.genes.len() != spec.genome_len() {
            return Err(GenomeError::Length {
                expected: spec.genome_len(),
                found: self.genes.len(),
            });
        }
        for (position, &gene) in self.genes.iter().enumerate() {
            if !spec.is_legal(position, gene) {
                return Err(GenomeError::IllegalGene { position, gene });
            }
        }
        Ok(())
    }

    fn block(&self, spec: &EncodingSpec, block: Block) -> &[u32] {
        let k = match block {
            Block::Main => 0,
            Block::Adf(i) => i + 1,
        };
        let len = spec.block_len();
        &self.genes[k * len..(k + 1) * len]
    }
}

/// Samples every gene uniformly from its position's legal set.
pub fn random_chromosome<R: Rng + ?Sized>(spec: &EncodingSpec, rng: &mut R) -> Chromosome {
    let genes = (0..spec.genome_len())
        .map(|p| {
            let legal = spec.legal_genes(p);
            legal[rng.random_range(0..legal.len())]
        })
        .collect();
    Chromosome { genes }
}

/// Decoded chromosome before ADF calls are expanded.
#[derive(Clone, Debug, PartialEq)]
pub enum ProgramNode {
    Function(Function, Vec<ProgramNode>),
    Variable(Var),
    Constant(usize),
    AdfCall(usize, Vec<ProgramNode>),
    AdfArg(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub main: ProgramNode,
    pub adfs: Vec<ProgramNode>,
    pub constants: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
enum Symbol {
    Function(Function),
    Variable(Var),
    Constant,
    AdfCall(usize),
    AdfArg(usize),
}

fn classify(
    gene: u32,
    block: Block,
    spec: &EncodingSpec,
    lib: &SymbolLibrary,
) -> Result<Symbol, GenomeError> {
    let (a, b, c, d) = (spec.bound_a, spec.bound_b, spec.bound_c, spec.bound_d);
    let terminal = |gene: u32| -> Result<Symbol, GenomeError> {
        let idx = scale_gene(gene, b, c, lib.terminals.len())?;
        Ok(match lib.terminals[idx] {
            Terminal::Var(v) => Symbol::Variable(v),
            Terminal::Constant => Symbol::Constant,
        })
    };
    if gene < a {
        let idx = scale_gene(gene, 0, a, lib.functions.len())?;
        Ok(Symbol::Function(lib.functions[idx]))
    } else if gene < b {
        Ok(Symbol::AdfCall(scale_gene(gene, a, b, spec.num_adfs)?))
    } else if gene < c {
        terminal(gene)
    } else if gene < d {
        match block {
            Block::Adf(_) => Ok(Symbol::AdfArg(scale_gene(gene, c, d, spec.num_adf_args)?)),
            // argument slots mean nothing in the main function
            Block::Main => terminal(b + (gene - c) % (c - b)),
        }
    } else {
        Err(GenomeError::OutOfSegment {
            gene,
            lower: 0,
            upper: d,
        })
    }
}

fn arity(sym: &Symbol, spec: &EncodingSpec) -> usize {
    match sym {
        Symbol::Function(f) => f.arity(),
        Symbol::AdfCall(_) => spec.num_adf_args,
        _ => 0,
    }
}

/// Symbols of the expressed prefix of a Karva block, read breadth-first.
fn expressed(
    genes: &[u32],
    block: Block,
    spec: &EncodingSpec,
    lib: &SymbolLibrary,
) -> Result<Vec<Symbol>, GenomeError> {
    let mut syms = Vec::new();
    let mut needed = 1;
    while syms.len() < needed {
        let sym = classify(genes[syms.len()], block, spec, lib)?;
        needed += arity(&sym, spec);
        syms.push(sym);
    }
    Ok(syms)
}

fn build_block(
    syms: &[Symbol],
    spec: &EncodingSpec,
    constants: &mut Vec<f64>,
) -> ProgramNode {
    // children of node k start at child_start[k] in breadth-first order
    let mut child_start = Vec::with_capacity(syms.len());
    let mut next = 1;
    for s in syms {
        child_start.push(next);
        next += arity(s, spec);
    }
    // constant slots are numbered in gene order
    let const_ids: Vec<Option<usize>> = syms
        .iter()
        .map(|s| {
            matches!(s, Symbol::Constant).then(|| {
                constants.push(1.0);
                constants.len() - 1
            })
        })
        .collect();

    fn build(
        k: usize,
        syms: &[Symbol],
        starts: &[usize],
        const_ids: &[Option<usize>],
        spec: &EncodingSpec,
    ) -> ProgramNode {
        let children = |n: usize| -> Vec<ProgramNode> {
            (0..n)
                .map(|j| build(starts[k] + j, syms, starts, const_ids, spec))
                .collect()
        };
        match syms[k] {
            Symbol::Function(f) => ProgramNode::Function(f, children(f.arity())),
            Symbol::AdfCall(i) => ProgramNode::AdfCall(i, children(spec.num_adf_args)),
            Symbol::Variable(v) => ProgramNode::Variable(v),
            Symbol::Constant => ProgramNode::Constant(const_ids[k].unwrap()),
            Symbol::AdfArg(i) => ProgramNode::AdfArg(i),
        }
    }
    build(0, syms, &child_start, &const_ids, spec)
}

/// Decodes the main function and every ADF without expanding calls.
pub fn decode_program(
    chromosome: &Chromosome,
    spec: &EncodingSpec,
    lib: &SymbolLibrary,
) -> Result<Program, GenomeError> {
    chromosome.validate(spec)?;
    spec.task_index(lib)?;
    let mut constants = Vec::new();
    let main_syms = expressed(chromosome.block(spec, Block::Main), Block::Main, spec, lib)?;
    let main = build_block(&main_syms, spec, &mut constants);
    let mut adfs = Vec::with_capacity(spec.num_adfs);
    for i in 0..spec.num_adfs {
        let syms = expressed(chromosome.block(spec, Block::Adf(i)), Block::Adf(i), spec, lib)?;
        adfs.push(build_block(&syms, spec, &mut constants));
    }
    Ok(Program {
        main,
        adfs,
        constants,
    })
}

/// Number of expressed genes in each block (main first, then ADFs).
pub fn expressed_lengths(
    chromosome: &Chromosome,
    spec: &EncodingSpec,
    lib: &SymbolLibrary,
) -> Result<Vec<usize>, GenomeError> {
    chromosome.validate(spec)?;
    std::iter::once(Block::Main)
        .chain((0..spec.num_adfs).map(Block::Adf))
        .map(|b| expressed(chromosome.block(spec, b), b, spec, lib).map(|s| s.len()))
        .collect()
}

impl Program {
    fn expand(&self, node: &ProgramNode, args: &[Node]) -> Node {
        match node {
            ProgramNode::Function(f, children) => {
                f.build(children.iter().map(|c| self.expand(c, args)).collect())
            }
            ProgramNode::Variable(v) => Node::Var(*v),
            ProgramNode::Constant(i) => Node::Const(*i),
            ProgramNode::AdfCall(i, children) => {
                let call_args: Vec<Node> = children.iter().map(|c| self.expand(c, args)).collect();
                self.expand(&self.adfs[*i], &call_args)
            }
            ProgramNode::AdfArg(i) => args[*i].clone(),
        }
    }

    /// Expands every ADF call. Constants inside an ADF body are shared by all
    /// of its call sites.
    pub fn inline(&self) -> ExprTree {
        let root = self.expand(&self.main, &[]);
        ExprTree::new(root, self.constants.clone()).compact_constants()
    }
}

/// Decodes a chromosome into the task's expression tree, with all ADF calls
/// expanded and every constant initialized to 1.0.
pub fn decode(
    chromosome: &Chromosome,
    spec: &EncodingSpec,
    lib: &SymbolLibrary,
) -> Result<ExprTree, GenomeError> {
    Ok(decode_program(chromosome, spec, lib)?.inline())
}

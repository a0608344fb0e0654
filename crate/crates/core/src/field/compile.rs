use super::eval::{apply, divide, finite, power, DomainError};
use super::node::{Func, Node, Var};

const INLINE_STACK: usize = 48;
const TIME_SLOT: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Push(f64),
    Load(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow(i32),
    Call(Func),
}

/// Postfix form of a [`FieldExpr`](super::FieldExpr) for fast repeated
/// evaluation. Produces bit-identical results to the tree walker.
#[derive(Debug, Clone)]
pub struct Program {
    ops: Vec<Op>,
    depth: usize,
    dim: usize,
    constant: Option<f64>,
}

impl Program {
    pub(super) fn new(root: &Node, dim: usize) -> Self {
        let mut ops = Vec::new();
        emit(root, &mut ops);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Push(_) | Op::Load(_) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div => depth -= 1,
                Op::Neg | Op::Pow(_) | Op::Call(_) => {}
            }
            max_depth = max_depth.max(depth);
        }
        let constant = match ops.as_slice() {
            [Op::Push(c)] => Some(*c),
            _ => None,
        };
        Self {
            ops,
            depth: max_depth,
            dim,
            constant,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }

    /// Evaluates at `(x, t)`; `x` must hold at least `dim` coordinates.
    #[inline]
    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64, DomainError> {
        if let Some(c) = self.constant {
            return Ok(c);
        }
        if self.depth <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            self.run(&mut stack, x, t)
        } else {
            let mut stack = vec![0.0f64; self.depth];
            self.run(&mut stack, x, t)
        }
    }

    fn run(&self, stack: &mut [f64], x: &[f64], t: f64) -> Result<f64, DomainError> {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Push(c) => {
                    stack[sp] = c;
                    sp += 1;
                }
                Op::Load(slot) => {
                    stack[sp] = if slot == TIME_SLOT { t } else { x[slot] };
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Pow(n) => stack[sp - 1] = power(stack[sp - 1], n)?,
                Op::Call(f) => stack[sp - 1] = apply(f, stack[sp - 1])?,
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    sp -= 1;
                    let b = stack[sp];
                    let a = stack[sp - 1];
                    stack[sp - 1] = match *op {
                        Op::Add => finite(a + b)?,
                        Op::Sub => finite(a - b)?,
                        Op::Mul => finite(a * b)?,
                        _ => divide(a, b)?,
                    };
                }
            }
        }
        Ok(stack[0])
    }
}

fn emit(node: &Node, ops: &mut Vec<Op>) {
    match node {
        Node::Const(c) => ops.push(Op::Push(*c)),
        Node::Var(Var::Space(k)) => ops.push(Op::Load(*k)),
        Node::Var(Var::Time) => ops.push(Op::Load(TIME_SLOT)),
        Node::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Node::Pow(a, n) => {
            emit(a, ops);
            ops.push(Op::Pow(*n));
        }
        Node::Call(f, a) => {
            emit(a, ops);
            ops.push(Op::Call(*f));
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(match node {
                Node::Add(..) => Op::Add,
                Node::Sub(..) => Op::Sub,
                Node::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
    }
}

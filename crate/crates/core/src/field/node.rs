use std::fmt;
use std::sync::Arc;

/// A variable of a field expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    /// Spatial coordinate, zero-based (`Space(0)` is `x1`).
    Space(usize),
    Time,
}

impl Var {
    pub fn is_valid(self, dim: usize) -> bool {
        match self {
            Var::Space(k) => k < dim,
            Var::Time => true,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Space(k) => write!(f, "x{}", k + 1),
            Var::Time => f.write_str("t"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
}

impl Func {
    pub const ALL: [Func; 5] = [Func::Sin, Func::Cos, Func::Exp, Func::Log, Func::Tanh];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Applies the function, returning `None` outside its domain.
    pub(crate) fn apply(self, x: f64) -> Option<f64> {
        match self {
            Func::Sin => Some(x.sin()),
            Func::Cos => Some(x.cos()),
            Func::Exp => Some(x.exp()),
            Func::Log => (x > 0.0).then(|| x.ln()),
            Func::Tanh => Some(x.tanh()),
        }
    }
}

/// Expression tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Neg(Arc<Node>),
    Add(Arc<Node>, Arc<Node>),
    Sub(Arc<Node>, Arc<Node>),
    Mul(Arc<Node>, Arc<Node>),
    Div(Arc<Node>, Arc<Node>),
    Pow(Arc<Node>, i32),
    Call(Func, Arc<Node>),
}

impl Node {
    pub(crate) fn mentions(&self, var: Var) -> bool {
        match self {
            Node::Const(_) => false,
            Node::Var(v) => *v == var,
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => a.mentions(var),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.mentions(var) || b.mentions(var)
            }
        }
    }

    pub(crate) fn size(&self) -> usize {
        match self {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => 1 + a.size(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }
}

/// Node constructors with constant folding and neutral-element rules.
///
/// Folding never produces a non-finite constant: if folding would overflow or
/// leave a function's domain, the node is kept so evaluation reports it.
pub(crate) mod build {
    use super::*;

    fn as_const(n: &Node) -> Option<f64> {
        match n {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn folded(value: f64) -> Option<Arc<Node>> {
        value.is_finite().then(|| constant(value))
    }

    pub fn constant(value: f64) -> Arc<Node> {
        Arc::new(Node::Const(value))
    }

    pub fn neg(a: Arc<Node>) -> Arc<Node> {
        match &*a {
            Node::Const(c) => constant(-c),
            Node::Neg(inner) => inner.clone(),
            _ => Arc::new(Node::Neg(a)),
        }
    }

    pub fn add(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
        match (as_const(&a), as_const(&b)) {
            (Some(x), Some(y)) => folded(x + y).unwrap_or_else(|| Arc::new(Node::Add(a, b))),
            (Some(0.0), _) => b,
            (_, Some(0.0)) => a,
            _ => Arc::new(Node::Add(a, b)),
        }
    }

    pub fn sub(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
        match (as_const(&a), as_const(&b)) {
            (Some(x), Some(y)) => folded(x - y).unwrap_or_else(|| Arc::new(Node::Sub(a, b))),
            (Some(0.0), _) => neg(b),
            (_, Some(0.0)) => a,
            _ if a == b => constant(0.0),
            _ => Arc::new(Node::Sub(a, b)),
        }
    }

    pub fn mul(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
        match (as_const(&a), as_const(&b)) {
            (Some(x), Some(y)) => folded(x * y).unwrap_or_else(|| Arc::new(Node::Mul(a, b))),
            (Some(0.0), _) | (_, Some(0.0)) => constant(0.0),
            (Some(1.0), _) => b,
            (_, Some(1.0)) => a,
            (Some(-1.0), _) => neg(b),
            (_, Some(-1.0)) => neg(a),
            _ => Arc::new(Node::Mul(a, b)),
        }
    }

    pub fn div(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
        match (as_const(&a), as_const(&b)) {
            (Some(x), Some(y)) if y != 0.0 => {
                folded(x / y).unwrap_or_else(|| Arc::new(Node::Div(a, b)))
            }
            (_, Some(1.0)) => a,
            _ => Arc::new(Node::Div(a, b)),
        }
    }

    pub fn pow(a: Arc<Node>, exponent: i32) -> Arc<Node> {
        match (as_const(&a), exponent) {
            (_, 0) => constant(1.0),
            (_, 1) => a,
            (Some(x), n) if x != 0.0 || n > 0 => {
                folded(x.powi(n)).unwrap_or_else(|| Arc::new(Node::Pow(a, n)))
            }
            _ => Arc::new(Node::Pow(a, exponent)),
        }
    }

    pub fn call(func: Func, a: Arc<Node>) -> Arc<Node> {
        if let Some(x) = as_const(&a) {
            if let Some(node) = func.apply(x).and_then(folded) {
                return node;
            }
        }
        Arc::new(Node::Call(func, a))
    }
}

use thiserror::Error;

use super::node::{Func, Node, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainErrorKind {
    LogOfNonPositive,
    DivisionByZero,
    /// An intermediate or final value overflowed or became NaN.
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("domain error ({kind:?})")]
pub struct DomainError {
    pub kind: DomainErrorKind,
}

impl DomainError {
    pub(crate) const fn new(kind: DomainErrorKind) -> Self {
        Self { kind }
    }
}

#[inline]
pub(super) fn finite(v: f64) -> Result<f64, DomainError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DomainError::new(DomainErrorKind::NonFinite))
    }
}

#[inline]
pub(super) fn divide(a: f64, b: f64) -> Result<f64, DomainError> {
    if b == 0.0 {
        return Err(DomainError::new(DomainErrorKind::DivisionByZero));
    }
    finite(a / b)
}

#[inline]
pub(super) fn power(a: f64, n: i32) -> Result<f64, DomainError> {
    if n < 0 && a == 0.0 {
        return Err(DomainError::new(DomainErrorKind::DivisionByZero));
    }
    finite(a.powi(n))
}

#[inline]
pub(super) fn apply(func: Func, a: f64) -> Result<f64, DomainError> {
    match func.apply(a) {
        Some(v) => finite(v),
        None => Err(DomainError::new(DomainErrorKind::LogOfNonPositive)),
    }
}

pub(super) fn evaluate(node: &Node, x: &[f64], t: f64) -> Result<f64, DomainError> {
    match node {
        Node::Const(c) => Ok(*c),
        Node::Var(Var::Space(k)) => Ok(x[*k]),
        Node::Var(Var::Time) => Ok(t),
        Node::Neg(a) => Ok(-evaluate(a, x, t)?),
        Node::Add(a, b) => finite(evaluate(a, x, t)? + evaluate(b, x, t)?),
        Node::Sub(a, b) => finite(evaluate(a, x, t)? - evaluate(b, x, t)?),
        Node::Mul(a, b) => finite(evaluate(a, x, t)? * evaluate(b, x, t)?),
        Node::Div(a, b) => divide(evaluate(a, x, t)?, evaluate(b, x, t)?),
        Node::Pow(a, n) => power(evaluate(a, x, t)?, *n),
        Node::Call(f, a) => apply(*f, evaluate(a, x, t)?),
    }
}

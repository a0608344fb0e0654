//! Coefficient-field expressions.
//!
//! A [`FieldExpr`] is an immutable expression tree over the spatial variables
//! `x1..xn` and the time `t`. Expressions are parsed from infix text, evaluated
//! at space-time points, and differentiated symbolically. Derivatives are exact
//! (up to floating-point evaluation); the only simplification performed is
//! constant folding and a few neutral-element rules applied while building
//! nodes.
//!
//! ```
//! use lagflow::field::{FieldExpr, Var};
//!
//! let e = FieldExpr::parse("exp(-x1*x1)", 1).unwrap();
//! let de = e.differentiate(Var::Space(0));
//! let x = 0.7_f64;
//! let expected = -2.0 * x * (-x * x).exp();
//! assert!((de.evaluate(&[x], 0.0).unwrap() - expected).abs() < 1e-14);
//! ```

mod compile;
mod diff;
mod display;
mod eval;
mod node;
mod parse;
pub mod testing;

use std::fmt;
use std::ops;
use std::sync::Arc;

pub use compile::Program;
pub use eval::{DomainError, DomainErrorKind};
pub use node::{Func, Node, Var};
pub use parse::{ParseError, SourceSpan};

use node::build;

/// Largest spatial dimension accepted by the parser.
pub const MAX_DIM: usize = 3;

/// An expression over `x1..xn` and `t`.
///
/// Cloning is cheap: the tree is shared behind an [`Arc`].
#[derive(Clone, PartialEq)]
pub struct FieldExpr {
    dim: usize,
    root: Arc<Node>,
}

impl FieldExpr {
    /// Parses `source` as an expression in `dim` spatial variables.
    pub fn parse(source: &str, dim: usize) -> Result<Self, ParseError> {
        let root = parse::parse(source, dim)?;
        Ok(Self { dim, root })
    }

    pub fn constant(value: f64, dim: usize) -> Self {
        Self {
            dim,
            root: build::constant(value),
        }
    }

    /// The variable `var` as an expression. Panics if `var` is out of range.
    pub fn variable(var: Var, dim: usize) -> Self {
        assert!(var.is_valid(dim), "variable {var} out of range for dimension {dim}");
        Self {
            dim,
            root: Arc::new(Node::Var(var)),
        }
    }

    pub(crate) fn from_node(root: Arc<Node>, dim: usize) -> Self {
        Self { dim, root }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Exact symbolic derivative with respect to `var`.
    ///
    /// Panics if `var` is not one of `x1..xn` or `t` for this expression's
    /// dimension.
    pub fn differentiate(&self, var: Var) -> Self {
        assert!(
            var.is_valid(self.dim),
            "cannot differentiate a {}-dimensional field with respect to {var}",
            self.dim
        );
        Self {
            dim: self.dim,
            root: diff::derivative(&self.root, var),
        }
    }

    /// Gradient with respect to the spatial variables.
    pub fn gradient(&self) -> Vec<Self> {
        (0..self.dim)
            .map(|k| self.differentiate(Var::Space(k)))
            .collect()
    }

    /// Evaluates the expression at `(x, t)` by walking the tree.
    ///
    /// Panics if `x.len()` differs from the expression's dimension.
    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<f64, DomainError> {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        eval::evaluate(&self.root, x, t)
    }

    /// Flattens the tree into a postfix program for repeated evaluation.
    pub fn compile(&self) -> Program {
        Program::new(&self.root, self.dim)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match *self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.as_constant().is_some()
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    pub fn depends_on_time(&self) -> bool {
        self.root.mentions(Var::Time)
    }

    /// Number of nodes in the tree (shared subtrees counted once per use).
    pub fn size(&self) -> usize {
        self.root.size()
    }

    pub fn powi(&self, exponent: i32) -> Self {
        Self::from_node(build::pow(self.root.clone(), exponent), self.dim)
    }

    pub fn call(&self, func: Func) -> Self {
        Self::from_node(build::call(func, self.root.clone()), self.dim)
    }

    fn combine(&self, rhs: &Self, f: impl FnOnce(Arc<Node>, Arc<Node>) -> Arc<Node>) -> Self {
        assert_eq!(self.dim, rhs.dim, "combining fields of different dimension");
        Self::from_node(f(self.root.clone(), rhs.root.clone()), self.dim)
    }
}

/// Parses a field expression; equivalent to [`FieldExpr::parse`].
pub fn parse_field(source: &str, dim: usize) -> Result<FieldExpr, ParseError> {
    FieldExpr::parse(source, dim)
}

impl fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        display::write_node(f, &self.root)
    }
}

impl fmt::Debug for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FieldExpr[{}]({})", self.dim, self)
    }
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $builder:path) => {
        impl ops::$trait<&FieldExpr> for &FieldExpr {
            type Output = FieldExpr;
            fn $method(self, rhs: &FieldExpr) -> FieldExpr {
                self.combine(rhs, $builder)
            }
        }
        impl ops::$trait<FieldExpr> for FieldExpr {
            type Output = FieldExpr;
            fn $method(self, rhs: FieldExpr) -> FieldExpr {
                (&self).$method(&rhs)
            }
        }
        impl ops::$trait<f64> for &FieldExpr {
            type Output = FieldExpr;
            fn $method(self, rhs: f64) -> FieldExpr {
                self.$method(&FieldExpr::constant(rhs, self.dim))
            }
        }
        impl ops::$trait<&FieldExpr> for f64 {
            type Output = FieldExpr;
            fn $method(self, rhs: &FieldExpr) -> FieldExpr {
                (&FieldExpr::constant(self, rhs.dim)).$method(rhs)
            }
        }
    };
}

binary_op!(Add, add, build::add);
binary_op!(Sub, sub, build::sub);
binary_op!(Mul, mul, build::mul);
binary_op!(Div, div, build::div);

impl ops::Neg for &FieldExpr {
    type Output = FieldExpr;
    fn neg(self) -> FieldExpr {
        FieldExpr::from_node(build::neg(self.root.clone()), self.dim)
    }
}

impl ops::Neg for FieldExpr {
    type Output = FieldExpr;
    fn neg(self) -> FieldExpr {
        -&self
    }
}

/// Sums a sequence of fields; the empty sum is the zero field of `dim`.
pub fn sum<'a>(dim: usize, terms: impl IntoIterator<Item = &'a FieldExpr>) -> FieldExpr {
    terms
        .into_iter()
        .fold(FieldExpr::constant(0.0, dim), |acc, t| &acc + t)
}

/// A scalar function of space and time that can be sampled along paths.
pub trait SpaceTimeField: Sync {
    fn value(&self, x: &[f64], t: f64) -> Result<f64, DomainError>;
}

impl SpaceTimeField for FieldExpr {
    fn value(&self, x: &[f64], t: f64) -> Result<f64, DomainError> {
        self.evaluate(x, t)
    }
}

impl SpaceTimeField for Program {
    fn value(&self, x: &[f64], t: f64) -> Result<f64, DomainError> {
        self.eval(x, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn grammar_cases() {
        let e = FieldExpr::parse("x1*x1 + 2", 1).unwrap();
        let x1 = FieldExpr::variable(Var::Space(0), 1);
        assert_eq!(e, &(&x1 * &x1) + 2.0);

        let c = FieldExpr::parse("1", 3).unwrap();
        assert_eq!(c.as_constant(), Some(1.0));
    }

    #[test]
    fn unknown_variable_span() {
        let err = FieldExpr::parse("x3 + sin(t)", 2).unwrap_err();
        match err {
            ParseError::UnknownVariable { span, ref name } => {
                assert_eq!(name, "x3");
                assert_eq!((span.byte_start, span.byte_end), (0, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn power_and_chain_rules() {
        let e = FieldExpr::parse("x1*x1", 1).unwrap();
        let d = e.differentiate(Var::Space(0));
        for x in [-1.5, 0.0, 0.3, 2.0] {
            assert_eq!(d.evaluate(&[x], 0.0).unwrap(), 2.0 * x);
        }
        let s = FieldExpr::parse("sin(x1)", 1).unwrap();
        assert_eq!(
            s.differentiate(Var::Space(0)),
            FieldExpr::parse("cos(x1)", 1).unwrap()
        );
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let c = FieldExpr::parse("3.5 * 2", 2).unwrap();
        assert!(c.differentiate(Var::Space(1)).is_zero());
        assert!(c.differentiate(Var::Time).is_zero());
        let z = FieldExpr::constant(0.0, 2);
        assert_eq!(z.differentiate(Var::Space(0)), z);
    }

    #[test]
    fn gaussian_derivative_matches_central_difference() {
        let e = FieldExpr::parse("exp(-x1*x1)", 1).unwrap();
        let d = e.differentiate(Var::Space(0));
        let x = 0.7;
        let h = 1e-5;
        let fd = (e.evaluate(&[x + h], 0.0).unwrap() - e.evaluate(&[x - h], 0.0).unwrap())
            / (2.0 * h);
        let sym = d.evaluate(&[x], 0.0).unwrap();
        assert!(((sym - fd) / sym).abs() <= 1e-6, "sym={sym} fd={fd}");
    }

    #[test]
    fn evaluation_examples() {
        let e = FieldExpr::parse("x1+t", 1).unwrap();
        assert_eq!(e.evaluate(&[2.0], 3.0).unwrap(), 5.0);

        let inv = FieldExpr::parse("1/x1", 1).unwrap();
        let err = inv.evaluate(&[0.0], 0.0).unwrap_err();
        assert_eq!(err.kind, DomainErrorKind::DivisionByZero);

        let e = FieldExpr::parse("sin(x1)*exp(x2)", 2).unwrap();
        assert!((e.evaluate(&[FRAC_PI_2, 0.0], 0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_of_nonpositive_is_domain_error() {
        let e = FieldExpr::parse("log(x1)", 1).unwrap();
        assert_eq!(
            e.evaluate(&[-1.0], 0.0).unwrap_err().kind,
            DomainErrorKind::LogOfNonPositive
        );
        assert_eq!(
            e.compile().eval(&[0.0], 0.0).unwrap_err().kind,
            DomainErrorKind::LogOfNonPositive
        );
    }

    #[test]
    fn time_dependence_is_detected() {
        assert!(FieldExpr::parse("x1 + sin(t)", 1).unwrap().depends_on_time());
        assert!(!FieldExpr::parse("x1 + sin(2)", 1).unwrap().depends_on_time());
    }

    fn seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    proptest::proptest! {
        #[test]
        fn derivative_matches_finite_difference(seed in proptest::prelude::any::<u64>()) {
            use rand::Rng;
            let mut rng = seeded(seed);
            let dim = rng.random_range(1..=3);
            let e = testing::random_expr(&mut rng, dim, 6);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            let t = rng.random_range(0.0..1.0);
            let k = rng.random_range(0..=dim);
            let var = if k == dim { Var::Time } else { Var::Space(k) };
            if testing::is_well_conditioned(&e, &x, t, 0.1, 1e3) {
                if let Some(fd) = testing::central_difference(&e, &x, t, var) {
                    let sym = e.differentiate(var).evaluate(&x, t).unwrap();
                    let rel = (sym - fd).abs() / sym.abs().max(1.0);
                    proptest::prop_assert!(rel <= 1e-6, "{e}: d/d{var} sym={sym} fd={fd}");
                }
            }
        }

        #[test]
        fn print_parse_is_a_fixed_point(seed in proptest::prelude::any::<u64>()) {
            use rand::Rng;
            let mut rng = seeded(seed);
            let dim = rng.random_range(1..=3);
            let e = testing::random_expr(&mut rng, dim, 6);
            let printed = e.to_string();
            let reparsed = FieldExpr::parse(&printed, dim).unwrap();
            proptest::prop_assert_eq!(&reparsed, &e, "printed as {}", printed);
            proptest::prop_assert_eq!(reparsed.to_string(), printed);
        }

        #[test]
        fn compiled_and_tree_evaluation_agree(seed in proptest::prelude::any::<u64>()) {
            use rand::Rng;
            let mut rng = seeded(seed);
            let e = testing::random_expr(&mut rng, 2, 6);
            let program = e.compile();
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let t = rng.random_range(0.0..2.0);
            match (e.evaluate(&x, t), program.eval(&x, t)) {
                (Ok(a), Ok(b)) => proptest::prop_assert_eq!(a.to_bits(), b.to_bits()),
                (Err(a), Err(b)) => proptest::prop_assert_eq!(a, b),
                (a, b) => proptest::prop_assert!(false, "{a:?} vs {b:?}"),
            }
        }

        #[test]
        fn differentiation_is_linear(seed in proptest::prelude::any::<u64>()) {
            use rand::Rng;
            let mut rng = seeded(seed);
            let e1 = testing::random_expr(&mut rng, 2, 5);
            let e2 = testing::random_expr(&mut rng, 2, 5);
            let x = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
            let var = Var::Space(rng.random_range(0..2));
            let lhs = (&e1 + &e2).differentiate(var).evaluate(&x, 0.3);
            let r1 = e1.differentiate(var).evaluate(&x, 0.3);
            let r2 = e2.differentiate(var).evaluate(&x, 0.3);
            if let (Ok(l), Ok(a), Ok(b)) = (lhs, r1, r2) {
                proptest::prop_assert!((l - (a + b)).abs() <= 1e-12 * l.abs().max(1.0));
            }
        }
    }

    #[test]
    #[should_panic]
    fn differentiating_out_of_range_variable_panics() {
        FieldExpr::parse("x1", 1)
            .unwrap()
            .differentiate(Var::Space(1));
    }
}

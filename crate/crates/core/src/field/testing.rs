//! Random expression generation for property tests and the derivative audit.

use std::sync::Arc;

use rand::Rng;

use super::eval::evaluate;
use super::node::{build, Func, Node, Var};
use super::FieldExpr;

/// Draws a random expression of depth at most `max_depth` over `x1..x{dim}`
/// and `t`, with constants in `[-2, 2]`.
pub fn random_expr<R: Rng + ?Sized>(rng: &mut R, dim: usize, max_depth: usize) -> FieldExpr {
    FieldExpr::from_node(random_node(rng, dim, max_depth), dim)
}

fn random_leaf<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Arc<Node> {
    if rng.random_bool(0.3) {
        let c: f64 = rng.random_range(-2.0..2.0);
        build::constant((c * 100.0).round() / 100.0)
    } else {
        let k = rng.random_range(0..=dim);
        let var = if k == dim { Var::Time } else { Var::Space(k) };
        Arc::new(Node::Var(var))
    }
}

fn random_node<R: Rng + ?Sized>(rng: &mut R, dim: usize, depth: usize) -> Arc<Node> {
    if depth <= 1 || rng.random_bool(0.2) {
        return random_leaf(rng, dim);
    }
    let d = depth - 1;
    match rng.random_range(0..9) {
        0 => build::add(random_node(rng, dim, d), random_node(rng, dim, d)),
        1 => build::sub(random_node(rng, dim, d), random_node(rng, dim, d)),
        2 | 3 => build::mul(random_node(rng, dim, d), random_node(rng, dim, d)),
        4 => build::div(random_node(rng, dim, d), random_node(rng, dim, d)),
        5 => build::pow(random_node(rng, dim, d), rng.random_range(-2..=3)),
        6 => build::neg(random_node(rng, dim, d)),
        _ => {
            let f = Func::ALL[rng.random_range(0..Func::ALL.len())];
            build::call(f, random_node(rng, dim, d))
        }
    }
}

/// `true` when every sub-expression at `(x, t)` is finite with magnitude at
/// most `max_abs`, and every denominator, negative-power base and logarithm
/// argument stays at least `margin` away from its singularity.
pub fn is_well_conditioned(e: &FieldExpr, x: &[f64], t: f64, margin: f64, max_abs: f64) -> bool {
    check(e.root(), x, t, margin, max_abs).is_some()
}

fn check(node: &Node, x: &[f64], t: f64, margin: f64, max_abs: f64) -> Option<f64> {
    let ok = |v: f64| (v.is_finite() && v.abs() <= max_abs).then_some(v);
    match node {
        Node::Const(_) | Node::Var(_) => {}
        Node::Neg(a) => {
            check(a, x, t, margin, max_abs)?;
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) => {
            check(a, x, t, margin, max_abs)?;
            check(b, x, t, margin, max_abs)?;
        }
        Node::Div(a, b) => {
            check(a, x, t, margin, max_abs)?;
            if check(b, x, t, margin, max_abs)?.abs() < margin {
                return None;
            }
        }
        Node::Pow(a, n) => {
            let base = check(a, x, t, margin, max_abs)?;
            if *n < 0 && base.abs() < margin {
                return None;
            }
        }
        Node::Call(f, a) => {
            let arg = check(a, x, t, margin, max_abs)?;
            if *f == Func::Log && arg < margin {
                return None;
            }
        }
    }
    ok(evaluate(node, x, t).ok()?)
}

/// Central difference of `e` along `var` at `(x, t)` with step
/// `1e-5 * (1 + |coordinate|)`.
///
/// Returns `None` when the point is not a reliable place to difference: some
/// stencil point is ill-conditioned (see [`is_well_conditioned`]) or the
/// truncation error `h^2 |f'''| / 6`, estimated with wider five-point
/// stencils, exceeds `1e-8 * max(|f'|, 1)`.
pub fn central_difference(e: &FieldExpr, x: &[f64], t: f64, var: Var) -> Option<f64> {
    let coord = match var {
        Var::Space(k) => x[k],
        Var::Time => t,
    };
    let shifted = |d: f64| -> Option<f64> {
        let mut xs = x.to_vec();
        let mut ts = t;
        match var {
            Var::Space(k) => xs[k] += d,
            Var::Time => ts += d,
        }
        if !is_well_conditioned(e, &xs, ts, 0.1, 1e3) {
            return None;
        }
        e.evaluate(&xs, ts).ok()
    };
    let h = 1e-5 * (1.0 + coord.abs());
    let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);

    let mut third: f64 = 0.0;
    for s in [1e-2, 1e-3] {
        let d = (shifted(2.0 * s)? - 2.0 * shifted(s)? + 2.0 * shifted(-s)? - shifted(-2.0 * s)?) / (2.0 * s.powi(3));
        third = third.max(d.abs());
    }
    if h * h * third / 6.0 > 1e-8 * fd.abs().max(1.0) {
        return None;
    }
    Some(fd)
}

use std::sync::Arc;

use super::node::{build, Func, Node, Var};

pub(super) fn derivative(node: &Arc<Node>, var: Var) -> Arc<Node> {
    use build::*;
    if !node.mentions(var) {
        return constant(0.0);
    }
    match &**node {
        Node::Const(_) => constant(0.0),
        Node::Var(v) => constant(if *v == var { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(derivative(a, var)),
        Node::Add(a, b) => add(derivative(a, var), derivative(b, var)),
        Node::Sub(a, b) => sub(derivative(a, var), derivative(b, var)),
        Node::Mul(a, b) => add(
            mul(derivative(a, var), b.clone()),
            mul(a.clone(), derivative(b, var)),
        ),
        Node::Div(a, b) => {
            // (a/b)' = a'/b - a*b'/b^2
            let da = derivative(a, var);
            let db = derivative(b, var);
            sub(
                div(da, b.clone()),
                div(mul(a.clone(), db), pow(b.clone(), 2)),
            )
        }
        Node::Pow(a, n) => mul(
            mul(constant(f64::from(*n)), pow(a.clone(), n - 1)),
            derivative(a, var),
        ),
        Node::Call(func, a) => {
            let outer = match func {
                Func::Sin => call(Func::Cos, a.clone()),
                Func::Cos => neg(call(Func::Sin, a.clone())),
                Func::Exp => node.clone(),
                Func::Log => div(constant(1.0), a.clone()),
                Func::Tanh => sub(constant(1.0), pow(node.clone(), 2)),
            };
            mul(outer, derivative(a, var))
        }
    }
}

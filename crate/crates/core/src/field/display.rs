//! Pretty-printer producing text that re-parses to the identical tree.

use std::fmt::{self, Write};

use super::node::Node;

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_ATOM: u8 = 5;

fn precedence(node: &Node) -> u8 {
    match node {
        Node::Add(..) | Node::Sub(..) => PREC_SUM,
        Node::Mul(..) | Node::Div(..) => PREC_PRODUCT,
        Node::Neg(_) => PREC_UNARY,
        Node::Const(c) if c.is_sign_negative() => PREC_UNARY,
        Node::Pow(..) => 4,
        Node::Const(_) | Node::Var(_) | Node::Call(..) => PREC_ATOM,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, node: &Node, min_prec: u8) -> fmt::Result {
    if precedence(node) < min_prec {
        f.write_char('(')?;
        write_node(f, node)?;
        f.write_char(')')
    } else {
        write_node(f, node)
    }
}

pub(super) fn write_node(f: &mut fmt::Formatter<'_>, node: &Node) -> fmt::Result {
    match node {
        Node::Const(c) => write!(f, "{c}"),
        Node::Var(v) => write!(f, "{v}"),
        Node::Neg(a) => {
            f.write_char('-')?;
            write_child(f, a, PREC_UNARY)
        }
        Node::Add(a, b) => {
            write_child(f, a, PREC_SUM)?;
            f.write_str(" + ")?;
            write_child(f, b, PREC_PRODUCT)
        }
        Node::Sub(a, b) => {
            write_child(f, a, PREC_SUM)?;
            f.write_str(" - ")?;
            write_child(f, b, PREC_PRODUCT)
        }
        Node::Mul(a, b) => {
            write_child(f, a, PREC_PRODUCT)?;
            f.write_char('*')?;
            write_child(f, b, PREC_UNARY)
        }
        Node::Div(a, b) => {
            write_child(f, a, PREC_PRODUCT)?;
            f.write_char('/')?;
            write_child(f, b, PREC_UNARY + 1)
        }
        Node::Pow(a, n) => {
            write_child(f, a, PREC_ATOM)?;
            write!(f, "^{n}")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(f, a)?;
            f.write_char(')')
        }
    }
}

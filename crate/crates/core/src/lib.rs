//! Stochastic Lagrangian Monte Carlo for advection-diffusion equations with
//! variable diffusivity.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod brownian;
pub mod coefficients;
pub mod entropy;
pub mod estimators;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod linalg;
pub mod oracle;
pub mod scenario;
pub mod sde;
pub mod studies;

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/fields.md")]
    pub mod fields {}
    #[doc = include_str!("../../../book/src/coefficients.md")]
    pub mod coefficients {}
    #[doc = include_str!("../../../book/src/paths.md")]
    pub mod paths {}
    #[doc = include_str!("../../../book/src/charts.md")]
    pub mod charts {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    pub mod oracle {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    pub mod estimators {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    pub mod scenarios {}
}

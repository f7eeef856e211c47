//! Certified reduced-order solutions of parametrized transient
//! diffusion-reaction problems.

pub mod adapt;
pub mod disc;
pub mod equil;
pub mod error;
pub mod estimate;
pub mod expr;
pub mod fem;
pub mod goal;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod pgd;
pub mod problem;
pub mod report;
pub mod time;

pub use error::{Error, Result};
pub use problem::{Problem, ProblemSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    struct Overview;
    #[doc = include_str!("../../../book/src/problems.md")]
    struct Problems;
    #[doc = include_str!("../../../book/src/pgd.md")]
    struct Pgd;
    #[doc = include_str!("../../../book/src/bound.md")]
    struct Bound;
    #[doc = include_str!("../../../book/src/split.md")]
    struct Split;
    #[doc = include_str!("../../../book/src/goal.md")]
    struct Goal;
    #[doc = include_str!("../../../book/src/adapt.md")]
    struct Adapt;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}

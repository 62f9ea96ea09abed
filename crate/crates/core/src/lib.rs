//! Quadratic funding for public goods.
//!
//! The crate covers four layers:
//!
//! * [`mechanism`]: separable funding rules `F(c) = g(Σ h(c_i))` with the
//!   quadratic rule `(Σ √c_i)²` as the canonical member.
//! * [`preferences`]: citizen value functions, social welfare and the
//!   welfare-optimal funding level.
//! * [`equilibrium`]: the private-contribution game solved by damped
//!   Gauss–Seidel best responses.
//! * [`derivation`]: numerical checks that the quadratic rule is the unique
//!   solution of the matching functional equation and of the welfare ODEs.
//!
//! [`scenario`], [`report`] and [`run`] wire these together behind the
//! `qfund` command-line tool.

pub mod derivation;
pub mod equilibrium;
mod error;
pub mod exec;
pub mod mechanism;
pub mod preferences;
pub mod report;
pub mod run;
pub mod scenario;
pub mod table;

pub use error::{Error, Result};
pub use exec::Execution;
pub use mechanism::{ContributionProfile, LeverFunction, MechanismSpec, SmoothFn, WeightFunction};
pub use preferences::{Society, ValueFunction};

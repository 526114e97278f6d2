//! Partitioned exponential Runge–Kutta integrators with matrix-free Krylov
//! evaluation of φ-function coefficients.
//!
//! Modules build on each other bottom-up: [`phi`] (scalar and dense
//! φ-functions), [`operators`], [`krylov`], [`tableaux`], [`steppers`],
//! [`problems`] and [`harness`].

pub mod phi;
pub mod operators;
pub mod krylov;
pub mod tableaux;
pub mod steppers;
pub mod problems;
pub mod harness;

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Phi(#[from] phi::PhiError),
    #[error(transparent)]
    Operator(#[from] operators::OperatorError),
    #[error(transparent)]
    Krylov(#[from] krylov::KrylovError),
    #[error(transparent)]
    Tableau(#[from] tableaux::TableauError),
    #[error(transparent)]
    Eval(#[from] tableaux::EvalError),
    #[error(transparent)]
    Step(#[from] steppers::StepError),
    #[error(transparent)]
    Problem(#[from] problems::ProblemError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
}

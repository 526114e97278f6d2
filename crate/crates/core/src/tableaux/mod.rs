//! Method coefficients: expression trees, the tableau catalog, the α/β
//! transformation, operator-level evaluation and the stiff order-condition
//! checker.

pub mod catalog;
pub mod conditions;
pub mod eval;
pub mod expr;

pub use catalog::{
    dump_tableau, dump_transformed, tableau, tableau_order2, tableau_order3, tableau_order4,
    transform, ExprkTableau, TableauError, TransformedTableau,
};
pub use expr::CoefficientExpr;
pub use eval::{eval_coeff, eval_dense, EvalError, EvalStats, FusedEvaluator, MatrixFunctions};
pub use conditions::{
    check_order_conditions, check_order_conditions_with, ConditionForm, ConditionResidual,
    CONDITION_LABELS,
};

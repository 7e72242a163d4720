//! Coefficient fields, system descriptions and the example catalog.

pub mod catalog;
pub mod expr;
pub mod field;
pub mod system;

pub use catalog::{catalog, params, Params, CATALOG_NAMES};
pub use expr::{BinOp, Expr, Func, Var};
pub use field::{ScalarField, Table};
pub use system::{SampleWindow, SystemSpec, TimeExtension, ValidationReport, Violation, ViolationKind};

//! Feature-availability expressions.
//!
//! A small boolean language over scalar symbols:
//!
//! ```text
//! expr       := or
//! or         := and ("||" and)*
//! and        := unary ("&&" unary)*
//! unary      := "!" unary | atom
//! atom       := literal | path | "(" expr ")" | comparison
//! comparison := operand cmpop operand
//! operand    := literal | path
//! cmpop      := "<" | "<=" | ">" | ">=" | "==" | "!="
//! path       := ident ("." ident)*
//! ```
//!
//! Literals are `true`, `false`, decimal numbers and double-quoted strings
//! with backslash escapes (`\"`, `\\`, `\n`, `\t`, `\r`, `\u{hex}`).

mod ast;
mod eval;
mod parser;
mod print;
mod value;

use std::collections::BTreeSet;

pub use ast::{CompareOp, Expr, Operand, SymbolPath, MAX_PATH_SEGMENTS, NAMESPACES};
pub use eval::{evaluate_expression, EvalError};
pub use parser::{parse_expression, ExpressionError, ExpressionErrorKind};
pub use print::print_expression;
pub use value::{Value, ValueKind, ValueMap};

pub(crate) use value::number_to_json;

/// The set of dotted symbol paths referenced by `expr`.
pub fn collect_identifiers(expr: &Expr) -> BTreeSet<String> {
    expr.identifiers()
}

/// Paths whose first segment is not one of [`NAMESPACES`].
pub fn foreign_namespaces(expr: &Expr) -> Vec<SymbolPath> {
    expr.paths()
        .into_iter()
        .filter(|p| !NAMESPACES.contains(&p.namespace()))
        .collect()
}

use std::fmt::Write;

use super::ast::{Expr, Operand};

const PREC_OR: u8 = 1;
const PREC_AND: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_ATOM: u8 = 4;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Or(..) => PREC_OR,
        Expr::And(..) => PREC_AND,
        Expr::Not(_) => PREC_UNARY,
        _ => PREC_ATOM,
    }
}

/// Renders an expression with the minimal parentheses needed for the parser
/// to rebuild the same tree.
pub fn print_expression(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e, 0);
    out
}

fn write_expr(out: &mut String, e: &Expr, min_prec: u8) {
    let wrap = precedence(e) < min_prec;
    if wrap {
        out.push('(');
    }
    match e {
        Expr::Bool(b) => write_operand(out, &Operand::Bool(*b)),
        Expr::Number(n) => write_operand(out, &Operand::Number(*n)),
        Expr::Text(s) => write_text(out, s),
        Expr::Path(p) => out.push_str(p.dotted()),
        Expr::Not(inner) => {
            out.push('!');
            write_expr(out, inner, PREC_UNARY);
        }
        // left-associative: the right child of an equal-precedence operator
        // needs parentheses, the left child does not
        Expr::And(l, r) => {
            write_expr(out, l, PREC_AND);
            out.push_str(" && ");
            write_expr(out, r, PREC_AND + 1);
        }
        Expr::Or(l, r) => {
            write_expr(out, l, PREC_OR);
            out.push_str(" || ");
            write_expr(out, r, PREC_OR + 1);
        }
        Expr::Compare { op, lhs, rhs } => {
            write_operand(out, lhs);
            let _ = write!(out, " {} ", op.symbol());
            write_operand(out, rhs);
        }
    }
    if wrap {
        out.push(')');
    }
}

fn write_operand(out: &mut String, o: &Operand) {
    match o {
        Operand::Bool(b) => {
            let _ = write!(out, "{b}");
        }
        Operand::Number(n) => {
            let _ = write!(out, "{n}");
        }
        Operand::Text(s) => write_text(out, s),
        Operand::Path(p) => out.push_str(p.dotted()),
    }
}

fn write_text(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ast::CompareOp;
    use crate::expr::parse_expression;

    #[test]
    fn boolean_literal() {
        assert_eq!(print_expression(&Expr::Bool(true)), "true");
    }

    #[test]
    fn precedence_forces_parentheses() {
        let e = Expr::and(
            Expr::path("a"),
            Expr::or(Expr::path("b"), Expr::path("c")),
        );
        assert_eq!(print_expression(&e), "a && (b || c)");
        let e = Expr::or(
            Expr::path("a"),
            Expr::and(Expr::path("b"), Expr::path("c")),
        );
        assert_eq!(print_expression(&e), "a || b && c");
    }

    #[test]
    fn right_nested_same_operator_keeps_parentheses() {
        let e = Expr::or(
            Expr::path("a"),
            Expr::or(Expr::path("b"), Expr::path("c")),
        );
        assert_eq!(print_expression(&e), "a || (b || c)");
        assert_eq!(parse_expression("a || (b || c)").unwrap(), e);
    }

    #[test]
    fn negation_of_compound_and_comparison() {
        let e = Expr::not(Expr::and(Expr::path("a"), Expr::Bool(false)));
        assert_eq!(print_expression(&e), "!(a && false)");
        let e = Expr::not(Expr::compare(
            CompareOp::Ge,
            Operand::Number(1.5),
            Operand::Text("x\ty".into()),
        ));
        assert_eq!(print_expression(&e), "!1.5 >= \"x\\ty\"");
        assert_eq!(parse_expression(&print_expression(&e)).unwrap(), e);
    }

    #[test]
    fn control_characters_are_escaped() {
        let e = Expr::Text("a\u{1}b".into());
        let printed = print_expression(&e);
        assert_eq!(printed, "\"a\\u{1}b\"");
        assert_eq!(parse_expression(&printed).unwrap(), e);
    }
}

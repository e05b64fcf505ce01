use thiserror::Error;

use super::ast::{CompareOp, Expr, Operand};
use super::value::{Value, ValueKind, ValueMap};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound symbol `{0}`")]
    UnboundSymbol(String),
    #[error("type mismatch for `{op}`: {lhs}{}", .rhs.map(|r| format!(" vs {r}")).unwrap_or_default())]
    TypeMismatch {
        op: String,
        lhs: ValueKind,
        rhs: Option<ValueKind>,
    },
}

/// Evaluates an expression against a set of bindings.
///
/// Evaluation is strict: there is no truthiness, logical operators need
/// booleans and comparisons need operands of the same type (ordering only
/// on numbers). `&&` and `||` short-circuit, so `false && x` is `false`
/// even when `x` is unbound.
pub fn evaluate_expression(expr: &Expr, bindings: &ValueMap) -> Result<Value, EvalError> {
    match expr {
        Expr::Bool(b) => Ok(Value::Bool(*b)),
        Expr::Number(n) => Ok(Value::Number(*n)),
        Expr::Text(s) => Ok(Value::Text(s.clone())),
        Expr::Path(p) => lookup(p.dotted(), bindings),
        Expr::Not(inner) => match evaluate_expression(inner, bindings)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            other => Err(mismatch("!", other.kind(), None)),
        },
        Expr::And(l, r) => logical("&&", l, r, bindings, false),
        Expr::Or(l, r) => logical("||", l, r, bindings, true),
        Expr::Compare { op, lhs, rhs } => {
            let lhs = operand(lhs, bindings)?;
            let rhs = operand(rhs, bindings)?;
            compare(*op, &lhs, &rhs).map(Value::Bool)
        }
    }
}

fn lookup(path: &str, bindings: &ValueMap) -> Result<Value, EvalError> {
    bindings
        .get(path)
        .cloned()
        .ok_or_else(|| EvalError::UnboundSymbol(path.to_string()))
}

fn mismatch(op: &str, lhs: ValueKind, rhs: Option<ValueKind>) -> EvalError {
    EvalError::TypeMismatch {
        op: op.to_string(),
        lhs,
        rhs,
    }
}

fn logical(
    op: &str,
    l: &Expr,
    r: &Expr,
    bindings: &ValueMap,
    short_circuit_on: bool,
) -> Result<Value, EvalError> {
    let lhs = match evaluate_expression(l, bindings)? {
        Value::Bool(b) => b,
        other => return Err(mismatch(op, other.kind(), None)),
    };
    if lhs == short_circuit_on {
        return Ok(Value::Bool(lhs));
    }
    match evaluate_expression(r, bindings)? {
        Value::Bool(b) => Ok(Value::Bool(b)),
        other => Err(mismatch(op, ValueKind::Boolean, Some(other.kind()))),
    }
}

fn operand(o: &Operand, bindings: &ValueMap) -> Result<Value, EvalError> {
    match o {
        Operand::Bool(b) => Ok(Value::Bool(*b)),
        Operand::Number(n) => Ok(Value::Number(*n)),
        Operand::Text(s) => Ok(Value::Text(s.clone())),
        Operand::Path(p) => lookup(p.dotted(), bindings),
    }
}

fn compare(op: CompareOp, lhs: &Value, rhs: &Value) -> Result<bool, EvalError> {
    let fail = || mismatch(op.symbol(), lhs.kind(), Some(rhs.kind()));
    match (lhs, rhs) {
        (Value::Number(a), Value::Number(b)) => Ok(match op {
            CompareOp::Lt => a < b,
            CompareOp::Le => a <= b,
            CompareOp::Gt => a > b,
            CompareOp::Ge => a >= b,
            CompareOp::Eq => a == b,
            CompareOp::Ne => a != b,
        }),
        (Value::Text(a), Value::Text(b)) if !op.is_ordering() => Ok((a == b) == (op == CompareOp::Eq)),
        (Value::Bool(a), Value::Bool(b)) if !op.is_ordering() => Ok((a == b) == (op == CompareOp::Eq)),
        _ => Err(fail()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;

    fn eval(src: &str, bindings: &ValueMap) -> Result<Value, EvalError> {
        evaluate_expression(&parse_expression(src).unwrap(), bindings)
    }

    fn pets(user: f64, limit: f64) -> ValueMap {
        let mut m = ValueMap::new();
        m.insert("context.userPets", user);
        m.insert("plan.petsPerOwner", limit);
        m
    }

    #[test]
    fn strict_less_than_at_boundary() {
        let src = "context.userPets < plan.petsPerOwner";
        assert_eq!(eval(src, &pets(2.0, 4.0)), Ok(Value::Bool(true)));
        assert_eq!(eval(src, &pets(4.0, 4.0)), Ok(Value::Bool(false)));
    }

    #[test]
    fn missing_binding_is_unbound() {
        let mut m = ValueMap::new();
        m.insert("context.userPets", 2.0);
        assert_eq!(
            eval("context.userPets < plan.petsPerOwner", &m),
            Err(EvalError::UnboundSymbol("plan.petsPerOwner".into()))
        );
    }

    #[test]
    fn short_circuit_suppresses_unbound_errors() {
        let m = ValueMap::new();
        assert_eq!(eval("false && context.x", &m), Ok(Value::Bool(false)));
        assert_eq!(eval("true || context.x", &m), Ok(Value::Bool(true)));
        assert!(eval("true && context.x", &m).is_err());
    }

    #[test]
    fn no_truthiness() {
        let mut m = ValueMap::new();
        m.insert("context.n", 1.0);
        m.insert("context.s", "x");
        assert_eq!(
            eval("context.n && true", &m),
            Err(EvalError::TypeMismatch {
                op: "&&".into(),
                lhs: ValueKind::Number,
                rhs: None
            })
        );
        assert_eq!(
            eval("true || true && context.s", &m),
            Ok(Value::Bool(true))
        );
        assert!(matches!(eval("!context.s", &m), Err(EvalError::TypeMismatch { .. })));
        assert_eq!(
            eval("true && context.n", &m),
            Err(EvalError::TypeMismatch {
                op: "&&".into(),
                lhs: ValueKind::Boolean,
                rhs: Some(ValueKind::Number)
            })
        );
    }

    #[test]
    fn comparison_typing() {
        let mut m = ValueMap::new();
        m.insert("subscription.plan", "GOLD");
        m.insert("context.flag", true);
        assert_eq!(eval(r#"subscription.plan == "GOLD""#, &m), Ok(Value::Bool(true)));
        assert_eq!(eval(r#"subscription.plan != "GOLD""#, &m), Ok(Value::Bool(false)));
        assert_eq!(eval("context.flag == true", &m), Ok(Value::Bool(true)));
        assert_eq!(
            eval(r#"subscription.plan < "Z""#, &m),
            Err(EvalError::TypeMismatch {
                op: "<".into(),
                lhs: ValueKind::Text,
                rhs: Some(ValueKind::Text)
            })
        );
        assert!(eval("context.flag > false", &m).is_err());
        assert!(eval("context.flag == 1", &m).is_err());
    }

    #[test]
    fn bare_path_yields_its_value() {
        let mut m = ValueMap::new();
        m.insert("plan.supportPriority", "HIGH");
        assert_eq!(eval("plan.supportPriority", &m), Ok(Value::Text("HIGH".into())));
    }
}

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::types::Pricing;

/// Which kind of pricing element a name belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum NameKind {
    Feature,
    Plan,
    AddOn,
    UsageLimit,
}

impl fmt::Display for NameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NameKind::Feature => "feature",
            NameKind::Plan => "plan",
            NameKind::AddOn => "add-on",
            NameKind::UsageLimit => "usage limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: NameKind, name: String },
}

/// Parses a pricing document. YAML is the primary format; a document whose
/// first non-blank character is `{` is read as JSON.
///
/// Expressions are parsed eagerly; a broken expression does not fail the
/// parse and is reported by [`validate_pricing`](super::validate_pricing).
pub fn parse_pricing(document: &str) -> Result<Pricing, ParseError> {
    let pricing: Pricing = if document.trim_start().starts_with('{') {
        serde_json::from_str(document).map_err(|e| ParseError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?
    } else {
        serde_yaml::from_str(document).map_err(|e| {
            let (line, column) = e
                .location()
                .map(|l| (l.line(), l.column()))
                .unwrap_or((0, 0));
            ParseError::Syntax {
                line,
                column,
                message: e.to_string(),
            }
        })?
    };
    if let Some((kind, name)) = first_duplicate(&pricing) {
        return Err(ParseError::DuplicateName { kind, name });
    }
    Ok(pricing)
}

pub(crate) fn duplicates(pricing: &Pricing) -> Vec<(NameKind, String)> {
    fn dups<'a>(kind: NameKind, names: impl Iterator<Item = &'a str>, out: &mut Vec<(NameKind, String)>) {
        let mut seen = HashSet::new();
        for n in names {
            if !seen.insert(n) {
                out.push((kind, n.to_string()));
            }
        }
    }
    let mut out = Vec::new();
    dups(NameKind::Feature, pricing.features.iter().map(|f| f.name.as_str()), &mut out);
    dups(NameKind::Plan, pricing.plans.iter().map(|p| p.name.as_str()), &mut out);
    dups(NameKind::AddOn, pricing.add_ons.iter().map(|a| a.name.as_str()), &mut out);
    dups(NameKind::UsageLimit, pricing.usage_limits.iter().map(|l| l.name.as_str()), &mut out);
    out
}

fn first_duplicate(pricing: &Pricing) -> Option<(NameKind, String)> {
    duplicates(pricing).into_iter().next()
}

/// Renders a pricing as a YAML document accepted by [`parse_pricing`].
pub fn serialize_pricing(pricing: &Pricing) -> String {
    serde_yaml::to_string(pricing).expect("pricing is always representable as YAML")
}

/// Renders a pricing as pretty-printed JSON.
pub fn pricing_to_json(pricing: &Pricing) -> serde_json::Value {
    serde_json::to_value(pricing).expect("pricing is always representable as JSON")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
name: Mini
version: 3
currency: USD
features:
  - name: export
    valueType: BOOLEAN
    defaultValue: false
plans:
  - name: FREE
    monthlyPrice: 0
  - name: PRO
    monthlyPrice: 9.99
    featureValues:
      export: true
";

    #[test]
    fn parses_minimal_yaml() {
        let p = parse_pricing(MINIMAL).unwrap();
        assert_eq!(p.version, 3);
        assert_eq!(p.plans.len(), 2);
        assert_eq!(p.plans[1].monthly_price.to_string(), "9.99");
    }

    #[test]
    fn json_rendering_also_parses() {
        let p = parse_pricing(MINIMAL).unwrap();
        let json = serde_json::to_string_pretty(&pricing_to_json(&p)).unwrap();
        assert_eq!(parse_pricing(&json).unwrap(), p);
    }

    #[test]
    fn duplicate_plan_names_are_rejected() {
        let doc = MINIMAL.replace("name: PRO", "name: FREE");
        assert_eq!(
            parse_pricing(&doc).unwrap_err(),
            ParseError::DuplicateName {
                kind: NameKind::Plan,
                name: "FREE".into()
            }
        );
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_pricing("name: x\nversion: [1\n").unwrap_err();
        match err {
            ParseError::Syntax { line, .. } => assert!(line >= 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_pricing("{\"name\": \"x\",\n}").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 2, .. }));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = MINIMAL.replace("currency: USD", "currency: USD\ncolour: red");
        assert!(matches!(parse_pricing(&doc), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn serialized_numbers_stay_integral() {
        let doc = format!(
            "{MINIMAL}usageLimits:\n  - name: seats\n    defaultValue: 3\n    scope: SUBSCRIPTION\n    period: LIFETIME\n"
        );
        let p = parse_pricing(&doc).unwrap();
        let out = serialize_pricing(&p);
        assert!(out.contains("defaultValue: 3\n"), "{out}");
    }
}

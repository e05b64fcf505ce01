use std::collections::BTreeSet;
use std::fmt;

/// Namespaces a symbol path may start with once it is attached to a pricing.
pub const NAMESPACES: [&str; 4] = ["context", "plan", "subscription", "feature"];

/// Maximum number of dot-separated segments in a symbol path.
pub const MAX_PATH_SEGMENTS: usize = 4;

/// A dotted identifier such as `plan.petsPerOwner`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolPath {
    segments: Vec<String>,
    dotted: String,
}

impl SymbolPath {
    /// Builds a path from segments. Returns `None` for an empty list, too
    /// many segments, or a segment that is not an identifier.
    pub fn new<I, S>(segments: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.is_empty()
            || segments.len() > MAX_PATH_SEGMENTS
            || !segments.iter().all(|s| is_identifier(s))
        {
            return None;
        }
        let dotted = segments.join(".");
        Some(SymbolPath { segments, dotted })
    }

    pub fn parse(dotted: &str) -> Option<Self> {
        Self::new(dotted.split('.'))
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn namespace(&self) -> &str {
        &self.segments[0]
    }

    pub fn dotted(&self) -> &str {
        &self.dotted
    }
}

impl fmt::Display for SymbolPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dotted)
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && !is_keyword(s)
}

pub(crate) fn is_keyword(s: &str) -> bool {
    s == "true" || s == "false"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CompareOp {
    pub const ALL: [CompareOp; 6] = [
        CompareOp::Lt,
        CompareOp::Le,
        CompareOp::Gt,
        CompareOp::Ge,
        CompareOp::Eq,
        CompareOp::Ne,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Eq => "==",
            CompareOp::Ne => "!=",
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CompareOp::Eq | CompareOp::Ne)
    }
}

/// Operand of a comparison: a literal or a symbol path, never a nested
/// expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Bool(bool),
    Number(f64),
    Text(String),
    Path(SymbolPath),
}

/// Parsed availability expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Bool(bool),
    Number(f64),
    Text(String),
    Path(SymbolPath),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Compare {
        op: CompareOp,
        lhs: Operand,
        rhs: Operand,
    },
}

impl Expr {
    pub fn path(dotted: &str) -> Expr {
        Expr::Path(SymbolPath::parse(dotted).expect("valid symbol path"))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: Expr) -> Expr {
        Expr::Not(Box::new(inner))
    }

    pub fn and(lhs: Expr, rhs: Expr) -> Expr {
        Expr::And(Box::new(lhs), Box::new(rhs))
    }

    pub fn or(lhs: Expr, rhs: Expr) -> Expr {
        Expr::Or(Box::new(lhs), Box::new(rhs))
    }

    pub fn compare(op: CompareOp, lhs: Operand, rhs: Operand) -> Expr {
        Expr::Compare { op, lhs, rhs }
    }

    /// Every symbol path appearing in the expression, as dotted strings.
    pub fn identifiers(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_paths(&mut |p| {
            out.insert(p.dotted().to_string());
        });
        out
    }

    pub fn paths(&self) -> BTreeSet<SymbolPath> {
        let mut out = BTreeSet::new();
        self.visit_paths(&mut |p| {
            out.insert(p.clone());
        });
        out
    }

    fn visit_paths(&self, f: &mut impl FnMut(&SymbolPath)) {
        match self {
            Expr::Bool(_) | Expr::Number(_) | Expr::Text(_) => {}
            Expr::Path(p) => f(p),
            Expr::Not(inner) => inner.visit_paths(f),
            Expr::And(l, r) | Expr::Or(l, r) => {
                l.visit_paths(f);
                r.visit_paths(f);
            }
            Expr::Compare { lhs, rhs, .. } => {
                for operand in [lhs, rhs] {
                    if let Operand::Path(p) = operand {
                        f(p);
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Not(inner) => 1 + inner.depth(),
            Expr::And(l, r) | Expr::Or(l, r) => 1 + l.depth().max(r.depth()),
            _ => 1,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::print_expression(self))
    }
}

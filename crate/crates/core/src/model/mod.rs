//! Pricing documents: types, file format, validation, entitlement
//! resolution and semantic diffs.

mod diff;
mod format;
mod resolve;
mod types;
mod validate;

pub use diff::{diff_pricing, Change, ChangeKind, ChangeSet, Impact};
pub use format::{parse_pricing, pricing_to_json, serialize_pricing, NameKind, ParseError};
pub use resolve::{resolve_entitlements, Entitlement, EntitlementSet, Provenance, ResolveError};
pub use types::{
    symbol_key, AddOn, Feature, FeatureExpression, LimitPeriod, LimitScope, Plan, Pricing,
    Subscription, UsageLimit, ValueType,
};
pub(crate) use types::numbers;
pub use validate::{validate_pricing, Violation, ViolationKind};

/// The PetClinic pricing shipped with the crate, as YAML.
pub const PETCLINIC_YAML: &str = include_str!("../../testdata/petclinic.yaml");

/// Parses [`PETCLINIC_YAML`].
pub fn petclinic() -> Pricing {
    parse_pricing(PETCLINIC_YAML).expect("bundled fixture parses")
}

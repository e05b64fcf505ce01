//! Pricing-driven feature toggling.
//!
//! A pricing document declares features, plans, add-ons and usage limits.
//! The [`router::ToggleRouter`] evaluates every feature of a subscription in
//! one pass against a hot-swappable pricing snapshot, [`usage`] enforces
//! usage limits atomically, and [`token`] exports the result as a signed,
//! expiring token for untrusted clients.

pub mod expr;
pub mod model;
pub mod router;
pub mod token;
pub mod usage;

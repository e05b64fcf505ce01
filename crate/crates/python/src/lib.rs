//! Python bindings: pricing documents, the expression language, the toggle
//! router with in-memory usage counters, and feature tokens.
//!
//! Structured results cross the boundary as plain dicts and lists, built
//! from the same JSON the HTTP service returns.

use std::fmt::Display;

use pricing_core::expr::{evaluate_expression as eval_expr, parse_expression, print_expression, Value, ValueMap};
use pricing_core::model::{
    diff_pricing, parse_pricing, pricing_to_json, serialize_pricing, validate_pricing, Pricing, Subscription,
};
use pricing_core::router::{ContextProvider, Overlay, ToggleRouter};
use pricing_core::token::{issue_token, verify_token, TokenKey, DEFAULT_TTL_SECONDS};
use pricing_core::usage::{MemoryStore, UsageTracker};
use pyo3::create_exception;
use pyo3::exceptions::{PyTypeError, PyValueError};
use pyo3::prelude::*;

create_exception!(pricing_toggles, PricingError, PyValueError, "Invalid pricing, subscription or argument.");

fn pricing_err(e: impl Display) -> PyErr {
    PricingError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyTypeError::new_err(e.to_string()))
}

fn value_to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &value.to_json())
}

/// A parsed pricing document.
#[pyclass(frozen, name = "Pricing", module = "pricing_toggles")]
pub struct PyPricing {
    inner: Pricing,
}

#[pymethods]
impl PyPricing {
    /// Parses a YAML document. Semantic problems are reported by
    /// `validate()`, not raised.
    #[staticmethod]
    fn from_yaml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: parse_pricing(text).map_err(pricing_err)?,
        })
    }

    /// The bundled PetClinic example.
    #[staticmethod]
    fn petclinic() -> Self {
        Self {
            inner: pricing_core::model::petclinic(),
        }
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn version(&self) -> u64 {
        self.inner.version
    }

    #[getter]
    fn plans(&self) -> Vec<String> {
        self.inner.plans.iter().map(|p| p.name.clone()).collect()
    }

    #[getter]
    fn add_ons(&self) -> Vec<String> {
        self.inner.add_ons.iter().map(|a| a.name.clone()).collect()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Every violation as `{"kind", "path", "message"}`; empty when valid.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &serde_json::to_value(validate_pricing(&self.inner)).expect("violations serialize"))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &pricing_to_json(&self.inner))
    }

    fn to_yaml(&self) -> String {
        serialize_pricing(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Pricing(name={:?}, version={})", self.inner.name, self.inner.version)
    }
}

/// Changes turning `old` into `new`, each with its impact on existing
/// subscribers.
#[pyfunction]
fn diff<'py>(py: Python<'py>, old: &PyPricing, new: &PyPricing) -> PyResult<Bound<'py, PyAny>> {
    let changes = diff_pricing(&old.inner, &new.inner);
    to_py(py, &serde_json::to_value(changes).expect("changes serialize"))
}

/// Parses an expression and returns its canonical text.
#[pyfunction]
fn check_expression(source: &str) -> PyResult<String> {
    parse_expression(source).map(|e| print_expression(&e)).map_err(pricing_err)
}

/// Evaluates an expression against dotted-path bindings such as
/// `{"context.userPets": 2, "plan.maxPets": 4}`.
#[pyfunction]
fn evaluate_expression<'py>(
    py: Python<'py>,
    source: &str,
    bindings: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let expr = parse_expression(source).map_err(pricing_err)?;
    let json = from_py(bindings)?;
    let obj = json
        .as_object()
        .ok_or_else(|| PyTypeError::new_err("bindings must be a dict"))?;
    let mut map = ValueMap::new();
    for (path, v) in obj {
        let value = Value::from_json(v)
            .ok_or_else(|| PyTypeError::new_err(format!("binding `{path}` must be a bool, number or str")))?;
        map.insert(path.clone(), value);
    }
    let value = eval_expr(&expr, &map).map_err(pricing_err)?;
    value_to_py(py, &value)
}

fn subscription(subscriber_id: &str, plan: &str, add_ons: Vec<String>) -> Subscription {
    Subscription::new(subscriber_id, plan).with_add_ons(add_ons)
}

fn overrides_from(obj: Option<&Bound<'_, PyAny>>) -> PyResult<ValueMap> {
    match obj {
        None => Ok(ValueMap::new()),
        Some(obj) => ValueMap::context_from_json(&from_py(obj)?).map_err(PyTypeError::new_err),
    }
}

fn token_key(key: &[u8]) -> PyResult<TokenKey> {
    TokenKey::new(key.to_vec()).map_err(pricing_err)
}

/// Evaluates subscriptions against the current pricing. Usage counters live
/// in memory and feed `context.usage.*` like the HTTP service does.
#[pyclass(frozen, name = "ToggleRouter", module = "pricing_toggles")]
pub struct PyToggleRouter {
    router: ToggleRouter,
    tracker: UsageTracker<MemoryStore>,
}

impl PyToggleRouter {
    fn evaluate_result(
        &self,
        sub: &Subscription,
        context: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<pricing_core::router::EvaluationResult> {
        let overrides = overrides_from(context)?;
        let provider = Overlay {
            base: &self.tracker,
            overrides: &overrides,
        };
        self.router.evaluate_with(sub, &provider).map_err(pricing_err)
    }
}

#[pymethods]
impl PyToggleRouter {
    /// Raises `PricingError` if the pricing has violations.
    #[new]
    fn new(pricing: &PyPricing) -> PyResult<Self> {
        Ok(Self {
            router: ToggleRouter::new(pricing.inner.clone()).map_err(pricing_err)?,
            tracker: UsageTracker::new(MemoryStore::new()),
        })
    }

    #[getter]
    fn version(&self) -> u64 {
        self.router.version()
    }

    fn pricing(&self) -> PyPricing {
        PyPricing {
            inner: self.router.current_snapshot().pricing.clone(),
        }
    }

    /// Publishes a newer pricing and returns its version.
    fn swap(&self, pricing: &PyPricing) -> PyResult<u64> {
        self.router.swap_pricing(pricing.inner.clone()).map_err(pricing_err)
    }

    #[pyo3(signature = (plan, add_ons = Vec::new(), context = None, subscriber_id = "python", with_timestamps = false))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        plan: &str,
        add_ons: Vec<String>,
        context: Option<&Bound<'py, PyAny>>,
        subscriber_id: &str,
        with_timestamps: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let sub = subscription(subscriber_id, plan, add_ons);
        let result = self.evaluate_result(&sub, context)?;
        to_py(py, &result.to_json(with_timestamps))
    }

    #[pyo3(signature = (feature, plan, add_ons = Vec::new(), context = None, subscriber_id = "python"))]
    fn evaluate_feature<'py>(
        &self,
        py: Python<'py>,
        feature: &str,
        plan: &str,
        add_ons: Vec<String>,
        context: Option<&Bound<'py, PyAny>>,
        subscriber_id: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let sub = subscription(subscriber_id, plan, add_ons);
        let snapshot = self.router.current_snapshot();
        let overrides = overrides_from(context)?;
        let ctx = Overlay {
            base: &self.tracker,
            overrides: &overrides,
        }
        .fetch_context(&sub, &snapshot.pricing)
        .map_err(pricing_err)?;
        let status = snapshot.evaluate_feature(&sub, &ctx, feature).map_err(pricing_err)?;
        to_py(py, &serde_json::to_value(status).expect("status serializes"))
    }

    /// Consumes `amount` if it fits under the limit. Returns
    /// `{"granted", "used", "max", "limitName"}`.
    #[pyo3(signature = (limit, amount, plan, add_ons = Vec::new(), subscriber_id = "python", entity_key = None))]
    #[allow(clippy::too_many_arguments)]
    fn consume<'py>(
        &self,
        py: Python<'py>,
        limit: &str,
        amount: f64,
        plan: &str,
        add_ons: Vec<String>,
        subscriber_id: &str,
        entity_key: Option<&str>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let sub = subscription(subscriber_id, plan, add_ons);
        let snapshot = self.router.current_snapshot();
        let result = self
            .tracker
            .try_consume(&snapshot.pricing, &sub, limit, amount, entity_key)
            .map_err(pricing_err)?;
        to_py(py, &serde_json::to_value(result).expect("consume result serializes"))
    }

    /// Gives back `amount` and returns the new counter value.
    #[pyo3(signature = (limit, amount, plan, add_ons = Vec::new(), subscriber_id = "python", entity_key = None))]
    fn release(
        &self,
        limit: &str,
        amount: f64,
        plan: &str,
        add_ons: Vec<String>,
        subscriber_id: &str,
        entity_key: Option<&str>,
    ) -> PyResult<f64> {
        let sub = subscription(subscriber_id, plan, add_ons);
        let snapshot = self.router.current_snapshot();
        self.tracker
            .release_usage(&snapshot.pricing, &sub, limit, amount, entity_key)
            .map_err(pricing_err)
    }

    /// Evaluates and signs the result. `key` needs at least 32 bytes.
    #[pyo3(signature = (key, plan, add_ons = Vec::new(), context = None, subscriber_id = "python", ttl = DEFAULT_TTL_SECONDS, iat = None))]
    #[allow(clippy::too_many_arguments)]
    fn issue_token(
        &self,
        key: &[u8],
        plan: &str,
        add_ons: Vec<String>,
        context: Option<&Bound<'_, PyAny>>,
        subscriber_id: &str,
        ttl: u64,
        iat: Option<i64>,
    ) -> PyResult<String> {
        let key = token_key(key)?;
        let sub = subscription(subscriber_id, plan, add_ons);
        let result = self.evaluate_result(&sub, context)?;
        let iat = iat.unwrap_or_else(|| chrono::Utc::now().timestamp());
        issue_token(&result, &sub, ttl, &key, iat).map_err(pricing_err)
    }
}

/// Returns `{"verdict": ..., "payload"?: ..., "detail"?: ...}`.
#[pyfunction]
#[pyo3(signature = (token, key, now = None))]
fn verify<'py>(py: Python<'py>, token: &str, key: &[u8], now: Option<i64>) -> PyResult<Bound<'py, PyAny>> {
    let key = token_key(key)?;
    let now = now.unwrap_or_else(|| chrono::Utc::now().timestamp());
    to_py(py, &verify_token(token, &key, now).to_json())
}

#[pymodule]
pub fn pricing_toggles(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPricing>()?;
    m.add_class::<PyToggleRouter>()?;
    m.add_function(wrap_pyfunction!(diff, m)?)?;
    m.add_function(wrap_pyfunction!(check_expression, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_expression, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("PricingError", m.py().get_type::<PricingError>())?;
    m.add("DEFAULT_TTL_SECONDS", DEFAULT_TTL_SECONDS)?;
    Ok(())
}

use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(script: &str) {
    Python::initialize();
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(pricing_toggles::pricing_toggles)(py);
        let modules = py.import("sys").unwrap().getattr("modules").unwrap();
        modules.set_item("pricing_toggles", module).unwrap();
        let globals = PyDict::new(py);
        let code = CString::new(script).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python script failed");
        }
    });
}

#[test]
fn evaluates_the_three_plans() {
    run(r#"
import pricing_toggles as pt
p = pt.Pricing.petclinic()
assert p.name == "PetClinic" and p.version == 1, p
assert p.plans == ["BASIC", "GOLD", "PLATINUM"], p.plans
assert p.validate() == []
r = pt.ToggleRouter(p)
enabled = {plan: sorted(n for n, s in r.evaluate(plan)["statuses"].items() if s["enabled"]) for plan in p.plans}
assert len({tuple(v) for v in enabled.values()}) == 3, enabled
assert "evaluatedAt" not in r.evaluate("GOLD")
assert "evaluatedAt" in r.evaluate("GOLD", with_timestamps=True)
s = r.evaluate_feature("pets per owner", "GOLD", context={"userPets": 9})
assert (s["enabled"], s["reason"]) == (False, "EXPRESSION_FALSE"), s
"#);
}

#[test]
fn usage_and_tokens_round_trip() {
    run(r#"
import pricing_toggles as pt
r = pt.ToggleRouter(pt.Pricing.petclinic())
assert r.consume("pets per owner", 4, "GOLD", subscriber_id="ana") == {"granted": True, "used": 4, "max": 4, "limitName": "pets per owner"}
assert r.consume("pets per owner", 1, "GOLD", subscriber_id="ana")["granted"] is False
s = r.evaluate_feature("pets per owner", "GOLD", subscriber_id="ana")
assert s["reason"] == "LIMIT_EXHAUSTED", s
assert r.release("pets per owner", 1, "GOLD", subscriber_id="ana") == 3

key = b"k" * 32
tok = r.issue_token(key, "GOLD", ["SMART_REPORTS"], subscriber_id="ana", iat=1700000000, ttl=60)
ok = pt.verify(tok, key, now=1700000010)
assert ok["verdict"] == "VALID" and ok["payload"]["features"]["pets per owner"]["l"] == {"u": 3, "m": 4}, ok
assert pt.verify(tok, key, now=1700000060)["verdict"] == "EXPIRED"
assert pt.verify(tok, b"x" * 32, now=1700000010)["verdict"] == "INVALID_SIGNATURE"
try:
    pt.verify(tok, b"short")
    raise AssertionError("weak key accepted")
except pt.PricingError:
    pass
"#);
}

#[test]
fn expressions_diffs_and_errors() {
    run(r#"
import pricing_toggles as pt
assert pt.check_expression("context.a&&(context.b||!context.c)") == "context.a && (context.b || !context.c)"
assert pt.evaluate_expression("context.userPets < plan.maxPets", {"context.userPets": 2, "plan.maxPets": 4}) is True
try:
    pt.check_expression("context.a &&")
    raise AssertionError("parsed")
except pt.PricingError as e:
    assert "offset" in str(e)
assert issubclass(pt.PricingError, ValueError)

base = pt.Pricing.petclinic()
lowered = pt.Pricing.from_yaml(base.to_yaml().replace("pets per owner: 7", "pets per owner: 4"))
changes = pt.diff(base, lowered)
assert [c["impact"] for c in changes] == ["DEGRADES_EXISTING"], changes
assert pt.diff(base, base) == []

r = pt.ToggleRouter(base)
try:
    r.evaluate("DIAMOND")
    raise AssertionError("resolved")
except pt.PricingError:
    pass
"#);
}

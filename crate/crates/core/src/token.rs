//! Signed, expiring feature tokens.
//!
//! Wire format: `b64(header) "." b64(payload) "." b64(mac)` where `b64` is
//! unpadded base64url, both JSON segments are compact with sorted keys, and
//! `mac` is HMAC-SHA256 over the first two segments joined by `.`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::expr::Value;
use crate::model::{numbers, Subscription};
use crate::router::EvaluationResult;

type HmacSha256 = Hmac<Sha256>;

pub const MIN_KEY_LEN: usize = 32;
pub const DEFAULT_TTL_SECONDS: u64 = 300;
pub const ALG: &str = "HS256";
pub const TYP: &str = "PFT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenLimit {
    #[serde(serialize_with = "numbers::serialize")]
    pub u: f64,
    #[serde(serialize_with = "numbers::serialize")]
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenFeature {
    pub e: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<TokenLimit>,
}

/// Token payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TokenClaims {
    pub sub: String,
    pub ver: u64,
    pub plan: String,
    pub add_ons: Vec<String>,
    pub iat: i64,
    pub exp: i64,
    pub features: BTreeMap<String, TokenFeature>,
}

impl TokenClaims {
    /// Claims for `result`, valid for `ttl_seconds` from `iat`.
    pub fn from_result(result: &EvaluationResult, sub: &Subscription, iat: i64, ttl_seconds: u64) -> Result<Self, TokenError> {
        if ttl_seconds == 0 {
            return Err(TokenError::InvalidTtl);
        }
        let ttl = i64::try_from(ttl_seconds).map_err(|_| TokenError::InvalidTtl)?;
        let exp = iat.checked_add(ttl).ok_or(TokenError::InvalidTtl)?;
        let mut add_ons: Vec<String> = sub.add_on_names.iter().cloned().collect();
        add_ons.sort();
        let features = result
            .statuses
            .iter()
            .map(|(name, s)| {
                let f = TokenFeature {
                    e: s.enabled,
                    v: Some(s.value.clone()),
                    l: s.limit.as_ref().map(|l| TokenLimit { u: l.used, m: l.max }),
                };
                (name.clone(), f)
            })
            .collect();
        Ok(TokenClaims {
            sub: result.subscriber_id.clone(),
            ver: result.pricing_version,
            plan: sub.plan_name.clone(),
            add_ons,
            iat,
            exp,
            features,
        })
    }

    pub fn enabled(&self, feature: &str) -> bool {
        self.features.get(feature).is_some_and(|f| f.e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("signing key must be at least {MIN_KEY_LEN} bytes, got {0}")]
    WeakKey(usize),
    #[error("token ttl must be a positive number of seconds")]
    InvalidTtl,
}

/// Outcome of verifying a token. Expiry is only reported for tokens whose
/// signature checks out.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenVerdict {
    Valid(TokenClaims),
    InvalidSignature,
    Expired,
    Malformed(String),
}

impl TokenVerdict {
    pub fn code(&self) -> &'static str {
        match self {
            TokenVerdict::Valid(_) => "VALID",
            TokenVerdict::InvalidSignature => "INVALID_SIGNATURE",
            TokenVerdict::Expired => "EXPIRED",
            TokenVerdict::Malformed(_) => "MALFORMED",
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, TokenVerdict::Valid(_))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({ "verdict": self.code() });
        match self {
            TokenVerdict::Valid(claims) => {
                v["payload"] = serde_json::to_value(claims).expect("claims serialize");
            }
            TokenVerdict::Malformed(detail) => v["detail"] = detail.clone().into(),
            _ => {}
        }
        v
    }
}

/// HMAC key with the minimum length enforced.
#[derive(Clone)]
pub struct TokenKey(Vec<u8>);

impl std::fmt::Debug for TokenKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TokenKey({} bytes)", self.0.len())
    }
}

impl TokenKey {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, TokenError> {
        let bytes = bytes.into();
        if bytes.len() < MIN_KEY_LEN {
            return Err(TokenError::WeakKey(bytes.len()));
        }
        Ok(Self(bytes))
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.0).expect("hmac accepts any key length")
    }
}

/// Compact JSON with object keys in byte order. Integral numbers are
/// written without a fraction.
pub fn canonical_json(value: &serde_json::Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &serde_json::Value, out: &mut String) {
    use serde_json::Value as J;
    match value {
        J::Null | J::Bool(_) | J::String(_) => out.push_str(&value.to_string()),
        J::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => out.push_str(&crate::expr::number_to_json(f).to_string()),
            _ => write!(out, "{n}").expect("write to string"),
        },
        J::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        J::Object(map) => {
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push('{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&J::String(k.clone()).to_string());
                out.push(':');
                write_canonical(v, out);
            }
            out.push('}');
        }
    }
}

fn header_json() -> String {
    canonical_json(&serde_json::json!({ "alg": ALG, "typ": TYP }))
}

/// Signs already-built claims. Deterministic: equal inputs give equal bytes.
pub fn sign_claims(claims: &TokenClaims, key: &TokenKey) -> String {
    let payload = canonical_json(&serde_json::to_value(claims).expect("claims serialize"));
    let signing_input = format!(
        "{}.{}",
        URL_SAFE_NO_PAD.encode(header_json()),
        URL_SAFE_NO_PAD.encode(payload)
    );
    let mut mac = key.mac();
    mac.update(signing_input.as_bytes());
    let sig = mac.finalize().into_bytes();
    format!("{signing_input}.{}", URL_SAFE_NO_PAD.encode(sig))
}

/// Issues a token for `result` valid from `iat` for `ttl_seconds`.
pub fn issue_token(
    result: &EvaluationResult,
    sub: &Subscription,
    ttl_seconds: u64,
    key: &TokenKey,
    iat: i64,
) -> Result<String, TokenError> {
    Ok(sign_claims(&TokenClaims::from_result(result, sub, iat, ttl_seconds)?, key))
}

/// Checks a token against `key` at unix time `now`.
pub fn verify_token(token: &str, key: &TokenKey, now: i64) -> TokenVerdict {
    let segments: Vec<&str> = token.split('.').collect();
    let [header_b64, payload_b64, sig_b64] = segments[..] else {
        return TokenVerdict::Malformed(format!("expected 3 segments, found {}", segments.len()));
    };
    let decode = |what: &str, s: &str| {
        URL_SAFE_NO_PAD
            .decode(s)
            .map_err(|e| TokenVerdict::Malformed(format!("{what} is not base64url: {e}")))
    };
    let (header, payload, sig) = match (
        decode("header", header_b64),
        decode("payload", payload_b64),
        decode("signature", sig_b64),
    ) {
        (Ok(h), Ok(p), Ok(s)) => (h, p, s),
        (Err(v), _, _) | (_, Err(v), _) | (_, _, Err(v)) => return v,
    };

    let mut mac = key.mac();
    mac.update(header_b64.as_bytes());
    mac.update(b".");
    mac.update(payload_b64.as_bytes());
    // constant-time comparison
    if mac.verify_slice(&sig).is_err() {
        return TokenVerdict::InvalidSignature;
    }

    #[derive(Deserialize)]
    struct Header {
        alg: String,
        typ: String,
    }
    let header: Header = match serde_json::from_slice(&header) {
        Ok(h) => h,
        Err(e) => return TokenVerdict::Malformed(format!("header: {e}")),
    };
    if header.alg != ALG || header.typ != TYP {
        return TokenVerdict::Malformed(format!("unsupported header {}/{}", header.alg, header.typ));
    }
    let claims: TokenClaims = match serde_json::from_slice(&payload) {
        Ok(c) => c,
        Err(e) => return TokenVerdict::Malformed(format!("payload: {e}")),
    };
    if now >= claims.exp {
        return TokenVerdict::Expired;
    }
    TokenVerdict::Valid(claims)
}

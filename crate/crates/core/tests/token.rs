use pricing_core::expr::ValueMap;
use pricing_core::model::{petclinic, Subscription};
use pricing_core::router::ToggleRouter;
use pricing_core::token::{canonical_json, issue_token, sign_claims, verify_token, TokenClaims, TokenKey, TokenVerdict};
use rand::{Rng, SeedableRng};
use rand::rngs::StdRng;
use sha2::{Digest, Sha256};

const GOLDEN: &str = include_str!("../testdata/token_golden.txt");

/// HMAC-SHA256 straight from the definition, over the bare hash.
fn reference_hmac(key: &[u8], msg: &[u8]) -> [u8; 32] {
    let mut k = [0u8; 64];
    if key.len() > 64 {
        k[..32].copy_from_slice(&Sha256::digest(key));
    } else {
        k[..key.len()].copy_from_slice(key);
    }
    let ipad: Vec<u8> = k.iter().map(|b| b ^ 0x36).collect();
    let opad: Vec<u8> = k.iter().map(|b| b ^ 0x5c).collect();
    let inner = Sha256::new().chain_update(&ipad).chain_update(msg).finalize();
    Sha256::new().chain_update(&opad).chain_update(inner).finalize().into()
}

fn b64(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(bytes)
}

fn b64_decode(s: &str) -> Vec<u8> {
    use base64::Engine;
    base64::engine::general_purpose::URL_SAFE_NO_PAD.decode(s).unwrap()
}

fn golden() -> (String, String) {
    let mut lines = GOLDEN.lines().filter(|l| !l.starts_with('#'));
    (lines.next().unwrap().to_string(), lines.next().unwrap().to_string())
}

fn key() -> TokenKey {
    TokenKey::new(vec![0x61; 32]).unwrap()
}

#[test]
fn reference_hmac_matches_rfc4231_case_2() {
    let mac = reference_hmac(b"Jefe", b"what do ya want for nothing?");
    assert_eq!(
        mac.iter().map(|b| format!("{b:02x}")).collect::<String>(),
        "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
    );
}

#[test]
fn golden_vector_is_reproduced_byte_for_byte() {
    let (payload, token) = golden();
    let claims: TokenClaims = serde_json::from_str(&payload).unwrap();
    assert_eq!(canonical_json(&serde_json::to_value(&claims).unwrap()), payload);
    assert_eq!(sign_claims(&claims, &key()), token);
}

#[test]
fn golden_vector_agrees_with_reference_hmac() {
    let (payload, token) = golden();
    let head = format!("{}.{}", b64(br#"{"alg":"HS256","typ":"PFT"}"#), b64(payload.as_bytes()));
    let expected = format!("{head}.{}", b64(&reference_hmac(&[0x61; 32], head.as_bytes())));
    assert_eq!(token, expected);
}

#[test]
fn issued_tokens_agree_with_reference_hmac() {
    let router = ToggleRouter::new(petclinic()).unwrap();
    let mut ctx = ValueMap::new();
    ctx.insert("context.userPets", 1.0);
    ctx.insert("context.usage.petsPerOwner", 1.0);
    ctx.insert("context.usage.maxVisits", 2.0);
    let mut rng = StdRng::seed_from_u64(3);
    for plan in ["BASIC", "GOLD", "PLATINUM"] {
        let sub = Subscription::new("owner", plan).with_add_ons(["SMART_REPORTS"]);
        let result = router.evaluate_all(&sub, &ctx).unwrap();
        let raw: Vec<u8> = (0..48).map(|_| rng.gen()).collect();
        let k = TokenKey::new(raw.clone()).unwrap();
        let token = issue_token(&result, &sub, 120, &k, 1_700_000_000).unwrap();
        let (head, sig) = token.rsplit_once('.').unwrap();
        assert_eq!(b64_decode(sig), reference_hmac(&raw, head.as_bytes()));
    }
}

#[test]
fn golden_vector_verifies_until_expiry() {
    let (_, token) = golden();
    let TokenVerdict::Valid(claims) = verify_token(&token, &key(), 1_700_000_299) else {
        panic!("golden token should verify");
    };
    assert_eq!(claims.sub, "owner-42");
    assert!(claims.enabled("pets per owner"));
    assert_eq!(verify_token(&token, &key(), 1_700_000_300), TokenVerdict::Expired);
}

#[test]
fn tampered_header_or_signature_is_rejected() {
    let (_, token) = golden();
    let parts: Vec<&str> = token.split('.').collect();
    let other_header = b64(br#"{"alg":"none","typ":"PFT"}"#);
    let forged = format!("{other_header}.{}.{}", parts[1], parts[2]);
    assert_eq!(verify_token(&forged, &key(), 0), TokenVerdict::InvalidSignature);
    let mut sig = b64_decode(parts[2]);
    sig[0] ^= 1;
    let forged = format!("{}.{}.{}", parts[0], parts[1], b64(&sig));
    assert_eq!(verify_token(&forged, &key(), 0), TokenVerdict::InvalidSignature);
    let forged = format!("{}.{}.{}", parts[0], parts[1], b64(&sig[..31]));
    assert_eq!(verify_token(&forged, &key(), 0), TokenVerdict::InvalidSignature);
}

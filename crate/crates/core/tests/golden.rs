//! Golden vectors, checked against the independent codec in `common`.

mod common;

use common::{check_codecs, check_primitives, check_session, golden, hmac_sha256, parse, Parsed, GOLDEN};
use d2dauth::vectors::golden_vectors_text;

#[test]
fn emitted_vectors_match_the_checked_in_file() {
    assert_eq!(
        golden_vectors_text(),
        GOLDEN,
        "regenerate with `d2dauth vectors --emit crates/core/tests/golden`"
    );
}

#[test]
fn both_codecs_agree_on_all_eight_messages() {
    assert_eq!(check_codecs(&golden()), Ok(8));
}

#[test]
fn session_values_follow_from_the_inputs() {
    check_session(&golden()).unwrap();
}

#[test]
fn primitive_vectors_follow_from_the_inputs() {
    check_primitives(&golden()).unwrap();
}

#[test]
fn independent_codec_rejects_wrong_lengths() {
    let mut m1 = vec![1u8];
    m1.extend([0u8; 32]);
    assert!(matches!(parse(&m1), Ok(Parsed::Id(1, _))));
    m1.push(0);
    assert!(parse(&m1).is_err());
    assert!(parse(&[9]).is_err());
    assert!(parse(&[]).is_err());
}

#[test]
fn tampered_golden_session_is_detected() {
    let mut g = golden();
    let m3 = g["session"]["messages"]["m3"].as_str().unwrap().to_owned();
    let mut bytes = hex::decode(m3).unwrap();
    bytes[70] ^= 1;
    g["session"]["messages"]["m3"] = hex::encode(bytes).into();
    assert!(check_session(&g).is_err());
}

#[test]
fn hand_rolled_hmac_matches_rfc4231_case_2() {
    let mac = hmac_sha256(b"Jefe", b"what do ya want for nothing?");
    assert_eq!(
        hex::encode(mac),
        "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
    );
}

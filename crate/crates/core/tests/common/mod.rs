//! A second implementation of the wire format and key schedule, written
//! straight from the message layouts on top of SHA-256 and ChaCha20-Poly1305.
//! Shared by the golden-vector tests and the acceptance run.

#![allow(dead_code)]

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use num_bigint::BigUint;
use serde_json::Value;
use sha2::{Digest, Sha256};

use d2dauth::protocol::{MessageKind, ProtocolMessage};

pub const GOLDEN: &str = include_str!("../golden/vectors.json");

pub type B32 = [u8; 32];

macro_rules! ensure_eq {
    ($a:expr, $b:expr, $($ctx:tt)+) => {
        if $a != $b {
            return Err(format!("{}: {:?} != {:?}", format!($($ctx)+), $a, $b));
        }
    };
}

pub fn sha(data: &[u8]) -> B32 {
    Sha256::digest(data).into()
}

pub fn hmac_sha256(key: &[u8], msg: &[u8]) -> B32 {
    let mut k = [0u8; 64];
    if key.len() > 64 {
        k[..32].copy_from_slice(&sha(key));
    } else {
        k[..key.len()].copy_from_slice(key);
    }
    let ipad: Vec<u8> = k.iter().map(|b| b ^ 0x36).collect();
    let opad: Vec<u8> = k.iter().map(|b| b ^ 0x5c).collect();
    let inner = sha(&[ipad.as_slice(), msg].concat());
    sha(&[opad.as_slice(), &inner].concat())
}

fn lp_fields(fields: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in fields {
        out.extend_from_slice(&(f.len() as u32).to_be_bytes());
        out.extend_from_slice(f);
    }
    out
}

pub fn tag(key: &B32, fields: &[&[u8]]) -> B32 {
    hmac_sha256(key, &lp_fields(fields))
}

pub fn xor(a: &B32, b: &B32) -> B32 {
    std::array::from_fn(|i| a[i] ^ b[i])
}

pub fn mask(v: &B32, k: &B32, r: &B32) -> B32 {
    xor(v, &sha(&xor(k, r)))
}

pub fn drbg(seed: &B32, idx: u64) -> B32 {
    sha(&[seed.as_slice(), &idx.to_be_bytes()].concat())
}

pub fn csi(link: &B32, from: u32, to: u32, seq: u64) -> B32 {
    sha(&[
        link.as_slice(),
        &from.to_be_bytes(),
        &to.to_be_bytes(),
        &seq.to_be_bytes(),
    ]
    .concat())
}

pub fn open(key: &B32, envelope: &[u8]) -> Result<Vec<u8>, String> {
    if envelope.len() < 28 {
        return Err("envelope too short".into());
    }
    ChaCha20Poly1305::new(key.into())
        .decrypt(Nonce::from_slice(&envelope[..12]), &envelope[12..])
        .map_err(|_| "envelope does not open".to_string())
}

pub fn exponent_block(e: u8) -> B32 {
    let mut b = [0u8; 32];
    b[31] = e;
    b
}

/// `(t^a + t^b) mod 2^64` in arbitrary precision.
pub fn f_oracle(t: u64, a: u32, b: u32) -> u64 {
    let m = BigUint::from(1u8) << 64;
    let v: BigUint = (BigUint::from(t).pow(a) + BigUint::from(t).pow(b)) % m;
    v.to_u64_digits().first().copied().unwrap_or(0)
}

fn hx(v: &Value) -> Result<Vec<u8>, String> {
    let s = v.as_str().ok_or_else(|| format!("not a string: {v}"))?;
    hex::decode(s).map_err(|e| e.to_string())
}

fn b32(v: &Value) -> Result<B32, String> {
    hx(v)?.try_into().map_err(|_| "not 32 bytes".to_string())
}

fn num(v: &Value) -> Result<u64, String> {
    v.as_u64().ok_or_else(|| format!("not a u64: {v}"))
}

#[derive(Debug, PartialEq)]
pub enum Parsed {
    Id(u8, B32),
    Triple(u8, B32, B32, B32),
    Sealed(u8, Vec<u8>),
}

pub fn parse(bytes: &[u8]) -> Result<Parsed, String> {
    let expected_len = [33, 33, 97, 97, 94, 93, 87, 45];
    let t = *bytes.first().ok_or("empty")?;
    if !(1..=8).contains(&t) {
        return Err(format!("tag {t}"));
    }
    ensure_eq!(bytes.len(), expected_len[usize::from(t) - 1], "M{t} length");
    let blk = |at: usize| -> B32 { bytes[at..at + 32].try_into().unwrap() };
    Ok(match t {
        1 | 2 => Parsed::Id(t, blk(1)),
        3 | 4 => Parsed::Triple(t, blk(1), blk(33), blk(65)),
        _ => Parsed::Sealed(t, bytes[1..].to_vec()),
    })
}

pub fn unparse(p: &Parsed) -> Vec<u8> {
    match p {
        Parsed::Id(t, a) => [&[*t][..], a].concat(),
        Parsed::Triple(t, a, b, c) => [&[*t][..], a, b, c].concat(),
        Parsed::Sealed(t, env) => [&[*t][..], env].concat(),
    }
}

pub fn golden() -> Value {
    serde_json::from_str(GOLDEN).expect("golden file parses")
}

/// Every message decodes to the same fields in both codecs and re-encodes byte-exactly.
pub fn check_codecs(g: &Value) -> Result<usize, String> {
    let msgs = &g["session"]["messages"];
    for (i, kind) in MessageKind::ALL.iter().enumerate() {
        let bytes = hx(&msgs[format!("m{}", i + 1)])?;
        let ours = parse(&bytes)?;
        ensure_eq!(unparse(&ours), bytes, "{kind} re-encode (independent)");
        let theirs = ProtocolMessage::decode(&bytes).map_err(|e| format!("{kind}: {e}"))?;
        ensure_eq!(theirs.kind(), *kind, "{kind} kind");
        ensure_eq!(theirs.encode(), bytes, "{kind} re-encode (library)");
        let same = match (&ours, &theirs) {
            (Parsed::Id(_, a), ProtocolMessage::M1 { edge_id_hash }) => a == edge_id_hash.as_bytes(),
            (Parsed::Id(_, a), ProtocolMessage::M2 { gw_id_hash }) => a == gw_id_hash.as_bytes(),
            (Parsed::Triple(_, id, m, t), ProtocolMessage::M3 { edge_id_hash, m_a, tag }) => {
                id == edge_id_hash.as_bytes() && m == m_a && t == tag.as_bytes()
            }
            (Parsed::Triple(_, id, t, m), ProtocolMessage::M4 { gw_id_hash, tag, m_b }) => {
                id == gw_id_hash.as_bytes() && t == tag.as_bytes() && m == m_b
            }
            (Parsed::Sealed(_, env), other) => other.envelope() == Some(env.as_slice()),
            _ => false,
        };
        if !same {
            return Err(format!("{kind}: field split differs between codecs"));
        }
    }
    Ok(MessageKind::ALL.len())
}

/// Recompute the whole session from its inputs and compare every field.
pub fn check_session(g: &Value) -> Result<(), String> {
    let s = &g["session"];
    let m = &s["messages"];
    let raw_id = hx(&s["edge_raw_id"])?;
    let seed = b32(&s["enroll_seed"])?;
    let link = b32(&s["link_seed"])?;
    let edge_hash = sha(&raw_id);
    let gw_hash = sha(&hx(&s["gw_raw_id"])?);
    ensure_eq!(b32(&s["edge_id_hash"])?, edge_hash, "edge_id_hash");
    ensure_eq!(b32(&s["gw_id_hash"])?, gw_hash, "gw_id_hash");

    let e_init = tag(&drbg(&seed, 0), &[&raw_id]);
    ensure_eq!(b32(&s["e_init"])?, e_init, "e_init");
    let r = drbg(&seed, 1);
    ensure_eq!(b32(&s["r"])?, r, "r");
    let c_i = csi(&link, 1, 2, 0);
    let c_r = csi(&link, 2, 1, 0);
    ensure_eq!(b32(&s["c_i"])?, c_i, "c_i");
    ensure_eq!(b32(&s["c_r"])?, c_r, "c_r");

    ensure_eq!(parse(&hx(&m["m1"])?)?, Parsed::Id(1, edge_hash), "M1");
    ensure_eq!(parse(&hx(&m["m2"])?)?, Parsed::Id(2, gw_hash), "M2");
    let m_a = mask(&c_r, &e_init, &r);
    ensure_eq!(
        parse(&hx(&m["m3"])?)?,
        Parsed::Triple(3, edge_hash, m_a, tag(&e_init, &[&edge_hash, &m_a, &r])),
        "M3"
    );
    let m_b = mask(&c_i, &c_r, &r);
    ensure_eq!(
        parse(&hx(&m["m4"])?)?,
        Parsed::Triple(4, gw_hash, tag(&c_r, &[&m_b, &gw_hash, &r]), m_b),
        "M4"
    );

    let sn = xor(&c_r, &c_i);
    ensure_eq!(b32(&s["sn_key"])?, sn, "sn_key");

    let sealed = |name: &str, t: u8| -> Result<Vec<u8>, String> {
        match parse(&hx(&m[name])?)? {
            Parsed::Sealed(tt, env) if tt == t => open(&sn, &env),
            other => Err(format!("{name}: {other:?}")),
        }
    };
    let p5 = sealed("m5", 5)?;
    ensure_eq!(
        p5,
        [c_i.as_slice(), &hx(&s["new_seed"])?, &[1]].concat(),
        "M5 plaintext"
    );

    let a = u8::try_from(num(&s["a"])?).map_err(|e| e.to_string())?;
    let b = u8::try_from(num(&s["b"])?).map_err(|e| e.to_string())?;
    let p6 = sealed("m6", 6)?;
    ensure_eq!(
        p6,
        [mask(&exponent_block(a), &sn, &r), edge_hash].concat(),
        "M6 plaintext"
    );

    let t = num(&s["t"])?;
    let f = f_oracle(t, a.into(), b.into());
    ensure_eq!(num(&s["f"])?, f, "f");
    let p7 = sealed("m7", 7)?;
    let want7 = [
        &[1u8][..],
        &f.to_be_bytes(),
        &[a],
        &t.to_be_bytes(),
        &mask(&exponent_block(b), &sn, &r),
        &2u64.to_be_bytes(),
    ]
    .concat();
    ensure_eq!(p7, want7, "M7 plaintext");
    let p8 = sealed("m8", 8)?;
    ensure_eq!(p8, [f.to_be_bytes(), 2u64.to_be_bytes()].concat(), "M8 plaintext");
    Ok(())
}

pub fn check_primitives(g: &Value) -> Result<(), String> {
    let p = &g["primitives"];
    let arr = |v: &Value| v.as_array().cloned().ok_or_else(|| format!("not an array: {v}"));
    for v in arr(&p["hash"])? {
        ensure_eq!(sha(&hx(&v["input"])?), b32(&v["output"])?, "hash");
    }
    let hmacs = arr(&p["hmac"])?;
    for v in &hmacs {
        let fields = arr(&v["fields"])?.iter().map(hx).collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&[u8]> = fields.iter().map(Vec::as_slice).collect();
        ensure_eq!(tag(&b32(&v["key"])?, &refs), b32(&v["tag"])?, "hmac");
    }
    if hmacs[0]["tag"] == hmacs[1]["tag"] {
        return Err("length prefixes failed to separate field splits".into());
    }
    let x = &p["xor_mask"];
    ensure_eq!(
        mask(&b32(&x["value"])?, &b32(&x["key"])?, &b32(&x["r"])?),
        b32(&x["output"])?,
        "xor_mask"
    );
    let seed = b32(&p["prng"]["seed"])?;
    for (i, d) in arr(&p["prng"]["draws"])?.iter().enumerate() {
        ensure_eq!(drbg(&seed, i as u64), b32(d)?, "prng draw {i}");
    }
    let k = &p["derive_init_key"];
    ensure_eq!(
        tag(&b32(&k["r"])?, &[&hx(&k["raw_id"])?]),
        b32(&k["e_init"])?,
        "derive_init_key"
    );
    let ae = &p["aead"];
    ensure_eq!(
        open(&b32(&ae["key"])?, &hx(&ae["envelope"])?)?,
        hx(&ae["plaintext"])?,
        "aead"
    );
    for v in arr(&p["compute_f"])? {
        let (t, a, b) = (num(&v["t"])?, num(&v["a"])?, num(&v["b"])?);
        ensure_eq!(
            f_oracle(t, a as u32, b as u32),
            num(&v["f"])?,
            "compute_f t={t} a={a} b={b}"
        );
    }
    Ok(())
}

//! Deterministic test vectors for the primitives and one full session.
//!
//! Every value comes from fixed inputs and a ChaCha20 RNG seeded with 0, so
//! the output is byte-identical across runs and platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use crate::channel::{Channel, ChannelConfig, EndpointId};
use crate::crypto::{
    aead_open, aead_seal, compute_f, derive_init_key, hash, hmac_tag, prng_draw, xor_mask, Exponent, ExponentBounds,
    Key256, Rand256, Seed,
};
use crate::protocol::wire::M7Plain;
use crate::protocol::{DeviceId, GatewayState, M7Outcome, PointXEntry, PointXOutcome, SessionConfig};

pub const EDGE_RAW_ID: [u8; 16] = *b"edge-device-0001";
pub const GW_RAW_ID: [u8; 16] = *b"gateway-000000a1";
pub const ENROLL_SEED: [u8; 32] = [0x5a; 32];
pub const LINK_SEED: [u8; 32] = [0x42; 32];
pub const RNG_SEED: u64 = 0;

const EDGE: EndpointId = EndpointId(1);
const GATEWAY: EndpointId = EndpointId(2);

fn h(b: &[u8]) -> String {
    hex::encode(b)
}

fn primitives() -> Value {
    let mut rng = ChaCha20Rng::seed_from_u64(RNG_SEED);
    let hashes: Vec<Value> = [&b""[..], b"abc", &[0u8; 64]]
        .iter()
        .map(|m| json!({"input": h(m), "output": h(hash(m).as_bytes())}))
        .collect();

    let key = Key256::from_bytes([0x0b; 32]);
    let hmacs: Vec<Value> = [
        vec![&b"Hi"[..], b"There"],
        vec![&b"HiThere"[..]],
        vec![&[0u8; 32][..], &[1u8; 32], &[]],
    ]
    .iter()
    .map(|fields| {
        json!({
            "key": h(key.as_bytes()),
            "fields": fields.iter().map(|f| h(f)).collect::<Vec<_>>(),
            "tag": h(hmac_tag(&key, fields).as_bytes()),
        })
    })
    .collect();

    let value = [0x11; 32];
    let mask_key = Key256::from_bytes([0x22; 32]);
    let r = Rand256::from_bytes([0x33; 32]);
    let masked = xor_mask(&value, &mask_key, &r);

    let seed = Seed::new(ENROLL_SEED);
    let mut draws = Vec::new();
    let mut s = seed;
    for _ in 0..3 {
        let (r, next) = prng_draw(&s);
        draws.push(h(r.as_bytes()));
        s = next;
    }
    let (r0, _) = prng_draw(&seed);

    let aead_key = Key256::from_bytes([0x77; 32]);
    let plaintext = b"continuous authentication";
    let envelope = aead_seal(&aead_key, plaintext, &mut rng);

    let bounds = ExponentBounds::default();
    let f_cases: Vec<Value> = [
        (0u64, 2u8, 2u8),
        (1000, 2, 3),
        (10_000, 16, 2),
        (u64::MAX, 15, 16),
        (65_537, 5, 9),
    ]
    .iter()
    .map(|&(t, a, b)| {
        let f = compute_f(t, Exponent::new(a), Exponent::new(b), &bounds).expect("exponents in bounds");
        json!({"t": t, "a": a, "b": b, "f": f.0})
    })
    .collect();

    json!({
        "hash": hashes,
        "hmac": hmacs,
        "xor_mask": {"value": h(&value), "key": h(mask_key.as_bytes()), "r": h(r.as_bytes()), "output": h(&masked)},
        "prng": {"seed": h(&ENROLL_SEED), "draws": draws},
        "derive_init_key": {"raw_id": h(&EDGE_RAW_ID), "r": h(r0.as_bytes()), "e_init": h(derive_init_key(&EDGE_RAW_ID, &r0).as_bytes())},
        "aead": {"key": h(aead_key.as_bytes()), "plaintext": h(plaintext), "envelope": h(&envelope)},
        "compute_f": f_cases,
    })
}

fn session() -> Value {
    let mut rng = ChaCha20Rng::seed_from_u64(RNG_SEED);
    let cfg = SessionConfig::default();
    let edge_id = DeviceId::new(EDGE_RAW_ID.to_vec());
    let mut gw = GatewayState::new(DeviceId::new(GW_RAW_ID.to_vec()), cfg);
    let mut edge = gw.enroll(&edge_id, Seed::new(ENROLL_SEED)).expect("fresh registry");
    let e_init = edge.e_init();
    let mut chan = Channel::new(ChannelConfig::lossless(LINK_SEED)).expect("valid channel");
    let eh = edge_id.id_hash();

    let m1 = edge.begin_auth().expect("fresh edge");
    let ev = chan.transmit(EDGE, GATEWAY, m1.clone(), 0).expect("lossless");
    let c_i = ev.csi_at_receiver;
    let m2 = gw.on_m1_event(&ev).expect("enrolled");
    let ev = chan.transmit(GATEWAY, EDGE, m2.clone(), 0).expect("lossless");
    let m3 = edge.on_m2_event(&ev).expect("in phase");
    let m4 = gw.on_m3(&m3).expect("honest M3");
    let m5 = edge.on_m4(&m4, &mut rng).expect("honest M4");
    gw.on_m5(&eh, &m5, 0).expect("honest M5");
    let sn_key = edge.sn_key();
    let new_seed = gw.registry().get(&eh).expect("enrolled").seed;

    let m6 = edge.ca_start(&mut rng).expect("session open");
    let PointXOutcome::Round(m7) = gw
        .point_x(&eh, PointXEntry::M6(&m6), 1000, &mut rng)
        .expect("honest M6")
    else {
        unreachable!("session is fresh");
    };
    let M7Outcome::Respond(m8) = edge.on_m7(&m7, &mut rng).expect("honest M7") else {
        unreachable!("ack is 1");
    };
    gw.on_m8(&eh, &m8).expect("honest M8");

    let m7_plain =
        M7Plain::decode(&aead_open(&sn_key, m7.envelope().expect("M7 is sealed")).expect("sealed under sn_key"))
            .expect("well formed");
    let b = Exponent::from_block(&xor_mask(&m7_plain.m_d, &sn_key, &edge.r())).expect("padded exponent");

    json!({
        "edge_raw_id": h(&EDGE_RAW_ID),
        "gw_raw_id": h(&GW_RAW_ID),
        "enroll_seed": h(&ENROLL_SEED),
        "link_seed": h(&LINK_SEED),
        "rng": "chacha20, seed_from_u64(0)",
        "session_config": cfg,
        "edge_id_hash": h(eh.as_bytes()),
        "gw_id_hash": h(edge.gw_id_hash().as_bytes()),
        "e_init": h(e_init.as_bytes()),
        "r": h(edge.r().as_bytes()),
        "c_i": h(c_i.as_bytes()),
        "c_r": h(edge.c_r().as_bytes()),
        "sn_key": h(sn_key.as_bytes()),
        "new_seed": h(new_seed.bytes()),
        "a": edge.exponent().expect("CA round running").value(),
        "b": b.value(),
        "t": m7_plain.t,
        "f": m7_plain.f.0,
        "messages": {
            "m1": h(&m1.encode()),
            "m2": h(&m2.encode()),
            "m3": h(&m3.encode()),
            "m4": h(&m4.encode()),
            "m5": h(&m5.encode()),
            "m6": h(&m6.encode()),
            "m7": h(&m7.encode()),
            "m8": h(&m8.encode()),
        },
    })
}

/// The full vector set.
pub fn golden_vectors() -> Value {
    json!({
        "primitives": primitives(),
        "session": session(),
    })
}

/// Pretty-printed with a trailing newline, as written to disk.
pub fn golden_vectors_text() -> String {
    let mut s = serde_json::to_string_pretty(&golden_vectors()).expect("json");
    s.push('\n');
    s
}

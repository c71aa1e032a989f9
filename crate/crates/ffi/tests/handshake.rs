use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use d2dauth_ffi::*;

const CFG: D2dSessionConfig = D2dSessionConfig {
    session_duration_ms: 3_000,
    ca_round_interval_ms: 1_000,
    exponent_max: 16,
};

struct Pair {
    gw: *mut D2dGateway,
    edge: *mut D2dEdge,
    eh: [u8; 32],
}

impl Drop for Pair {
    fn drop(&mut self) {
        unsafe {
            d2d_edge_free(self.edge);
            d2d_gateway_free(self.gw);
        }
    }
}

type Buf = ([u8; D2D_MAX_MESSAGE_LEN], usize);

fn buf() -> Buf {
    ([0; D2D_MAX_MESSAGE_LEN], 0)
}

fn ok(s: D2dStatus) {
    assert_eq!(s, D2dStatus::Ok, "{}", status_str(s));
}

fn status_str(s: D2dStatus) -> String {
    unsafe { CStr::from_ptr(d2d_status_str(s)) }
        .to_string_lossy()
        .into_owned()
}

fn pair() -> Pair {
    unsafe {
        let mut gw = ptr::null_mut();
        ok(d2d_gateway_new(b"gw-01".as_ptr(), 5, CFG, &mut gw));
        let mut edge = ptr::null_mut();
        ok(d2d_gateway_enroll(
            gw,
            b"edge-01".as_ptr(),
            7,
            [9u8; 32].as_ptr(),
            &mut edge,
        ));
        let mut eh = [0u8; 32];
        ok(d2d_edge_id_hash(edge, eh.as_mut_ptr()));
        Pair { gw, edge, eh }
    }
}

/// M1..M5 with fixed CSI samples; returns the edge's M5 status at the gateway.
unsafe fn handshake(p: &Pair, now: u64, csi_gw: [u8; 32], csi_edge: [u8; 32]) -> D2dStatus {
    let (mut m1, mut m2, mut m3, mut m4, mut m5) = (buf(), buf(), buf(), buf(), buf());
    ok(d2d_edge_begin_auth(p.edge, m1.0.as_mut_ptr(), m1.0.len(), &mut m1.1));
    ok(d2d_gateway_on_m1(
        p.gw,
        m1.0.as_ptr(),
        m1.1,
        csi_gw.as_ptr(),
        m2.0.as_mut_ptr(),
        m2.0.len(),
        &mut m2.1,
    ));
    ok(d2d_edge_on_m2(
        p.edge,
        m2.0.as_ptr(),
        m2.1,
        csi_edge.as_ptr(),
        m3.0.as_mut_ptr(),
        m3.0.len(),
        &mut m3.1,
    ));
    ok(d2d_gateway_on_m3(
        p.gw,
        m3.0.as_ptr(),
        m3.1,
        m4.0.as_mut_ptr(),
        m4.0.len(),
        &mut m4.1,
    ));
    ok(d2d_edge_on_m4(
        p.edge,
        m4.0.as_ptr(),
        m4.1,
        m5.0.as_mut_ptr(),
        m5.0.len(),
        &mut m5.1,
    ));
    assert_eq!([m1.1, m2.1, m3.1, m4.1, m5.1], [33, 33, 97, 97, 94]);
    d2d_gateway_on_m5(p.gw, p.eh.as_ptr(), m5.0.as_ptr(), m5.1, now)
}

unsafe fn keys(p: &Pair) -> ([u8; 32], [u8; 32]) {
    let (mut a, mut b) = ([0u8; 32], [0u8; 32]);
    ok(d2d_edge_session_key(p.edge, a.as_mut_ptr()));
    ok(d2d_gateway_session_key(p.gw, p.eh.as_ptr(), b.as_mut_ptr()));
    (a, b)
}

/// One CA round: returns whether the gateway signalled expiry.
unsafe fn round(p: &Pair, m7: &Buf, expired: u8) -> bool {
    let mut m8 = buf();
    let mut reauth = 9u8;
    ok(d2d_edge_on_m7(
        p.edge,
        m7.0.as_ptr(),
        m7.1,
        m8.0.as_mut_ptr(),
        m8.0.len(),
        &mut m8.1,
        &mut reauth,
    ));
    assert_eq!(reauth, expired);
    if reauth == 1 {
        assert_eq!(m8.1, 0);
        return true;
    }
    let mut ctr = 0;
    ok(d2d_gateway_on_m8(p.gw, p.eh.as_ptr(), m8.0.as_ptr(), m8.1, &mut ctr));
    assert!(ctr >= 2);
    false
}

#[test]
fn full_session_through_the_c_abi() {
    let p = pair();
    unsafe {
        let mut k = [0u8; 32];
        assert_eq!(d2d_edge_session_key(p.edge, k.as_mut_ptr()), D2dStatus::OutOfPhase);
        ok(handshake(&p, 0, [1; 32], [2; 32]));
        let (a, b) = keys(&p);
        assert_eq!(a, b);

        let mut m6 = buf();
        ok(d2d_edge_ca_start(p.edge, m6.0.as_mut_ptr(), m6.0.len(), &mut m6.1));
        assert_eq!(m6.1, 93);
        let mut m7 = buf();
        let mut expired = 9u8;
        ok(d2d_gateway_on_m6(
            p.gw,
            p.eh.as_ptr(),
            m6.0.as_ptr(),
            m6.1,
            0,
            m7.0.as_mut_ptr(),
            m7.0.len(),
            &mut m7.1,
            &mut expired,
        ));
        assert_eq!((m7.1, expired), (87, 0));
        assert!(!round(&p, &m7, 0));

        for now in [1_000, 2_000, 3_000, 4_000] {
            let mut m7 = buf();
            ok(d2d_gateway_next_round(
                p.gw,
                p.eh.as_ptr(),
                now,
                m7.0.as_mut_ptr(),
                m7.0.len(),
                &mut m7.1,
                &mut expired,
            ));
            let want = u8::from(now > CFG.session_duration_ms);
            assert_eq!(expired, want, "at {now}");
            if round(&p, &m7, want) {
                break;
            }
        }
        let mut k = [0u8; 32];
        assert_eq!(
            d2d_gateway_session_key(p.gw, p.eh.as_ptr(), k.as_mut_ptr()),
            D2dStatus::OutOfPhase
        );

        // Re-authenticate with fresh CSI: a new key, agreed on both sides.
        ok(handshake(&p, 4_000, [3; 32], [4; 32]));
        let (c, d) = keys(&p);
        assert_eq!(c, d);
        assert_ne!(c, a);
    }
}

#[test]
fn errors_come_back_as_status_codes() {
    let p = pair();
    unsafe {
        let mut m1 = buf();
        ok(d2d_edge_begin_auth(p.edge, m1.0.as_mut_ptr(), m1.0.len(), &mut m1.1));
        let mut small = [0u8; 8];
        let mut len = 0;
        assert_eq!(
            d2d_gateway_on_m1(
                p.gw,
                m1.0.as_ptr(),
                m1.1,
                [1; 32].as_ptr(),
                small.as_mut_ptr(),
                small.len(),
                &mut len
            ),
            D2dStatus::BufferTooSmall
        );
        assert_eq!(len, 33);
        assert_eq!(
            d2d_gateway_on_m1(
                p.gw,
                m1.0.as_ptr(),
                m1.1 - 1,
                [1; 32].as_ptr(),
                small.as_mut_ptr(),
                small.len(),
                &mut len
            ),
            D2dStatus::Malformed
        );
        assert_eq!(
            d2d_gateway_on_m1(
                p.gw,
                ptr::null(),
                33,
                [1; 32].as_ptr(),
                small.as_mut_ptr(),
                small.len(),
                &mut len
            ),
            D2dStatus::NullPointer
        );
        assert_eq!(
            d2d_edge_begin_auth(p.edge, m1.0.as_mut_ptr(), m1.0.len(), &mut m1.1),
            D2dStatus::OutOfPhase
        );

        let mut dup = ptr::null_mut();
        assert_eq!(
            d2d_gateway_enroll(p.gw, b"edge-01".as_ptr(), 7, [1u8; 32].as_ptr(), &mut dup),
            D2dStatus::DuplicateEnrollment
        );
        assert!(dup.is_null());

        let mut gw = ptr::null_mut();
        let bad = D2dSessionConfig {
            ca_round_interval_ms: 0,
            ..CFG
        };
        assert_eq!(
            d2d_gateway_new(b"g".as_ptr(), 1, bad, &mut gw),
            D2dStatus::InvalidArgument
        );
        d2d_gateway_free(ptr::null_mut());
        d2d_edge_free(ptr::null_mut());
    }
}

#[test]
fn tampered_m4_is_a_tag_mismatch() {
    let p = pair();
    unsafe {
        let (mut m1, mut m2, mut m3, mut m4, mut m5) = (buf(), buf(), buf(), buf(), buf());
        ok(d2d_edge_begin_auth(p.edge, m1.0.as_mut_ptr(), m1.0.len(), &mut m1.1));
        ok(d2d_gateway_on_m1(
            p.gw,
            m1.0.as_ptr(),
            m1.1,
            [1; 32].as_ptr(),
            m2.0.as_mut_ptr(),
            m2.0.len(),
            &mut m2.1,
        ));
        ok(d2d_edge_on_m2(
            p.edge,
            m2.0.as_ptr(),
            m2.1,
            [2; 32].as_ptr(),
            m3.0.as_mut_ptr(),
            m3.0.len(),
            &mut m3.1,
        ));
        ok(d2d_gateway_on_m3(
            p.gw,
            m3.0.as_ptr(),
            m3.1,
            m4.0.as_mut_ptr(),
            m4.0.len(),
            &mut m4.1,
        ));
        m4.0[40] ^= 1;
        let s = d2d_edge_on_m4(p.edge, m4.0.as_ptr(), m4.1, m5.0.as_mut_ptr(), m5.0.len(), &mut m5.1);
        assert_eq!(s, D2dStatus::TagMismatch);
        assert_eq!(status_str(s), "HMAC tag mismatch");
    }
}

#[test]
fn edge_rebuilt_from_enrollment_output_authenticates() {
    unsafe {
        let mut gw = ptr::null_mut();
        ok(d2d_gateway_new(b"gw-02".as_ptr(), 5, CFG, &mut gw));
        let mut gh = [0u8; 32];
        ok(d2d_gateway_id_hash(gw, gh.as_mut_ptr()));
        let seed = [7u8; 32];
        let mut enrolled = ptr::null_mut();
        ok(d2d_gateway_enroll(gw, b"e".as_ptr(), 1, seed.as_ptr(), &mut enrolled));
        d2d_edge_free(enrolled);

        // Enrollment consumed one DRBG draw to derive E_init.
        let e_init =
            d2dauth::crypto::derive_init_key(b"e", &d2dauth::crypto::prng_draw(&d2dauth::crypto::Seed::new(seed)).0);
        let mut edge = ptr::null_mut();
        ok(d2d_edge_new(
            b"e".as_ptr(),
            1,
            gh.as_ptr(),
            e_init.as_bytes().as_ptr(),
            seed.as_ptr(),
            1,
            CFG,
            &mut edge,
        ));
        let mut eh = [0u8; 32];
        ok(d2d_edge_id_hash(edge, eh.as_mut_ptr()));
        let p = Pair { gw, edge, eh };
        ok(handshake(&p, 0, [5; 32], [6; 32]));
        let (a, b) = keys(&p);
        assert_eq!(a, b);
    }
}

#[test]
fn hash_and_compute_f() {
    unsafe {
        let mut h = [0u8; 32];
        ok(d2d_hash(b"abc".as_ptr(), 3, h.as_mut_ptr()));
        assert_eq!(h[..4], [0xba, 0x78, 0x16, 0xbf]);
        ok(d2d_hash(ptr::null(), 0, h.as_mut_ptr()));
        assert_eq!(h[..4], [0xe3, 0xb0, 0xc4, 0x42]);
        let mut f = 0;
        ok(d2d_compute_f(3, 2, 3, 16, &mut f));
        assert_eq!(f, 36);
        ok(d2d_compute_f(u64::MAX, 2, 3, 16, &mut f));
        assert_eq!(f, 0);
        assert_eq!(d2d_compute_f(3, 1, 3, 16, &mut f), D2dStatus::ExponentOutOfBounds);
        assert_eq!(d2d_compute_f(3, 2, 17, 16, &mut f), D2dStatus::ExponentOutOfBounds);
    }
}

fn target_dir() -> PathBuf {
    // .../target/<profile>/deps/<test binary>
    std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf()
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/d2dauth.h")).unwrap();
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

#[test]
fn c_program_links_and_authenticates() {
    let lib = target_dir().join("libd2dauth_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("handshake");
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let st = Command::new(cc)
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(root.join("include"))
        .arg(root.join("examples/handshake.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(st.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("session keys match"), "{stdout}");
}

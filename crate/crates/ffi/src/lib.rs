//! C ABI over the edge and gateway state machines.
//!
//! Handles are opaque and owned by the caller: every `*_new`/`*_enroll`
//! must be paired with the matching `*_free`. Functions return a
//! [`D2dStatus`]; on anything but `D2D_OK` the output parameters are left
//! untouched, except `out_len`, which always receives the required size
//! when a message would have been written.
//!
//! The caller measures CSI on its own radio and passes the 32-byte sample
//! with M1 (gateway side) and M2 (edge side). Randomness comes from the
//! operating system.

#![allow(clippy::missing_safety_doc)]

use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::{ptr, slice};

use rand::rngs::OsRng;

use d2dauth::crypto::{compute_f, hash, CsiSample, Exponent, ExponentBounds, Key256, Seed};
use d2dauth::protocol::{
    DeviceId, EdgeState, GatewayState, M7Outcome, PointXEntry, PointXOutcome, ProtocolError, ProtocolMessage,
    SessionConfig,
};

/// Longest encoded message (M3/M4).
pub const D2D_MAX_MESSAGE_LEN: usize = 97;
/// Size of every key, hash, seed and CSI sample.
pub const D2D_BLOCK_LEN: usize = 32;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum D2dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Malformed = 4,
    UnknownEdge = 5,
    WrongGateway = 6,
    TagMismatch = 7,
    AeadFailure = 8,
    AckZero = 9,
    CsiMismatch = 10,
    ExponentEchoMismatch = 11,
    CounterMismatch = 12,
    FunctionMismatch = 13,
    DuplicateEnrollment = 14,
    OutOfPhase = 15,
    ExponentOutOfBounds = 16,
    Timeout = 17,
    Panic = 255,
}

impl From<ProtocolError> for D2dStatus {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::UnknownEdge => D2dStatus::UnknownEdge,
            ProtocolError::WrongGateway => D2dStatus::WrongGateway,
            ProtocolError::TagMismatch => D2dStatus::TagMismatch,
            ProtocolError::AeadFailure => D2dStatus::AeadFailure,
            ProtocolError::AckZero => D2dStatus::AckZero,
            ProtocolError::CsiMismatch => D2dStatus::CsiMismatch,
            ProtocolError::ExponentEchoMismatch => D2dStatus::ExponentEchoMismatch,
            ProtocolError::CounterMismatch => D2dStatus::CounterMismatch,
            ProtocolError::FunctionMismatch => D2dStatus::FunctionMismatch,
            ProtocolError::DuplicateEnrollment => D2dStatus::DuplicateEnrollment,
            ProtocolError::OutOfPhase { .. } => D2dStatus::OutOfPhase,
            ProtocolError::ExponentOutOfBounds(_) => D2dStatus::ExponentOutOfBounds,
            ProtocolError::Malformed(_) => D2dStatus::Malformed,
            ProtocolError::Timeout => D2dStatus::Timeout,
        }
    }
}

/// Session parameters, mirrored from the Rust `SessionConfig`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct D2dSessionConfig {
    /// Session lifetime T in milliseconds.
    pub session_duration_ms: u64,
    /// Interval between continuous-authentication rounds in milliseconds.
    pub ca_round_interval_ms: u64,
    /// Largest exponent drawn for the CA function (at least 2).
    pub exponent_max: u8,
}

impl From<D2dSessionConfig> for SessionConfig {
    fn from(c: D2dSessionConfig) -> Self {
        SessionConfig {
            session_duration_ms: c.session_duration_ms,
            exponent_max: c.exponent_max,
            ca_round_interval_ms: c.ca_round_interval_ms,
        }
    }
}

/// Opaque gateway handle.
pub struct D2dGateway {
    inner: GatewayState,
}

/// Opaque edge-device handle.
pub struct D2dEdge {
    inner: EdgeState,
}

type FfiResult = Result<(), D2dStatus>;

fn guard(f: impl FnOnce() -> FfiResult) -> D2dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => D2dStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => D2dStatus::Panic,
    }
}

unsafe fn bytes<'a>(p: *const u8, len: usize) -> Result<&'a [u8], D2dStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(D2dStatus::NullPointer);
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn block(p: *const u8) -> Result<[u8; D2D_BLOCK_LEN], D2dStatus> {
    if p.is_null() {
        return Err(D2dStatus::NullPointer);
    }
    Ok(*(p as *const [u8; D2D_BLOCK_LEN]))
}

unsafe fn write_block(out: *mut u8, value: &[u8; D2D_BLOCK_LEN]) -> FfiResult {
    if out.is_null() {
        return Err(D2dStatus::NullPointer);
    }
    ptr::copy_nonoverlapping(value.as_ptr(), out, D2D_BLOCK_LEN);
    Ok(())
}

unsafe fn handle<'a, T>(p: *mut T) -> Result<&'a mut T, D2dStatus> {
    p.as_mut().ok_or(D2dStatus::NullPointer)
}

unsafe fn decode(msg: *const u8, len: usize) -> Result<ProtocolMessage, D2dStatus> {
    let raw = bytes(msg, len)?;
    ProtocolMessage::decode(raw).map_err(|_| D2dStatus::Malformed)
}

unsafe fn emit(msg: &ProtocolMessage, out: *mut u8, cap: usize, out_len: *mut usize) -> FfiResult {
    if out_len.is_null() || out.is_null() {
        return Err(D2dStatus::NullPointer);
    }
    let wire = msg.encode();
    *out_len = wire.len();
    if wire.len() > cap {
        return Err(D2dStatus::BufferTooSmall);
    }
    ptr::copy_nonoverlapping(wire.as_ptr(), out, wire.len());
    Ok(())
}

fn config(c: D2dSessionConfig) -> Result<SessionConfig, D2dStatus> {
    let cfg = SessionConfig::from(c);
    cfg.validate().map_err(|_| D2dStatus::InvalidArgument)?;
    Ok(cfg)
}

/// Static, NUL-terminated description of a status code.
#[no_mangle]
pub extern "C" fn d2d_status_str(status: D2dStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        D2dStatus::Ok => b"ok\0",
        D2dStatus::NullPointer => b"null pointer\0",
        D2dStatus::InvalidArgument => b"invalid argument\0",
        D2dStatus::BufferTooSmall => b"output buffer too small\0",
        D2dStatus::Malformed => b"malformed message\0",
        D2dStatus::UnknownEdge => b"edge identity not registered\0",
        D2dStatus::WrongGateway => b"gateway identity does not match\0",
        D2dStatus::TagMismatch => b"HMAC tag mismatch\0",
        D2dStatus::AeadFailure => b"AEAD envelope failed to authenticate\0",
        D2dStatus::AckZero => b"acknowledgement was zero\0",
        D2dStatus::CsiMismatch => b"echoed CSI does not match\0",
        D2dStatus::ExponentEchoMismatch => b"echoed exponent does not match\0",
        D2dStatus::CounterMismatch => b"counter mismatch\0",
        D2dStatus::FunctionMismatch => b"function value mismatch\0",
        D2dStatus::DuplicateEnrollment => b"edge identity already enrolled\0",
        D2dStatus::OutOfPhase => b"message not accepted in the current phase\0",
        D2dStatus::ExponentOutOfBounds => b"exponent outside configured bounds\0",
        D2dStatus::Timeout => b"no response before timeout\0",
        D2dStatus::Panic => b"internal error\0",
    };
    s.as_ptr().cast()
}

/// SHA-256 of `data[0..len]` into `out[32]`.
#[no_mangle]
pub unsafe extern "C" fn d2d_hash(data: *const u8, len: usize, out: *mut u8) -> D2dStatus {
    guard(|| write_block(out, hash(bytes(data, len)?).as_bytes()))
}

/// `(t^a + t^b) mod 2^64`, with `a` and `b` checked against `[2, exponent_max]`.
#[no_mangle]
pub unsafe extern "C" fn d2d_compute_f(t: u64, a: u8, b: u8, exponent_max: u8, out: *mut u64) -> D2dStatus {
    guard(|| {
        if out.is_null() {
            return Err(D2dStatus::NullPointer);
        }
        let f = compute_f(
            t,
            Exponent::new(a),
            Exponent::new(b),
            &ExponentBounds::new(exponent_max),
        )
        .map_err(|e| D2dStatus::from(ProtocolError::from(e)))?;
        *out = f.0;
        Ok(())
    })
}

// ---- gateway ----

#[no_mangle]
pub unsafe extern "C" fn d2d_gateway_new(
    gw_id: *const u8,
    gw_id_len: usize,
    cfg: D2dSessionConfig,
    out: *mut *mut D2dGateway,
) -> D2dStatus {
    guard(|| {
        if out.is_null() {
            return Err(D2dStatus::NullPointer);
        }
        let id = DeviceId::new(bytes(gw_id, gw_id_len)?.to_vec());
        let gw = Box::new(D2dGateway {
            inner: GatewayState::new(id, config(cfg)?),
        });
        *out = Box::into_raw(gw);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2d_gateway_free(gw: *mut D2dGateway) {
    if !gw.is_null() {
        drop(Box::from_raw(gw));
    }
}

/// Writes H(gateway id) to `out[32]`.
#[no_mangle]
pub unsafe extern "C" fn d2d_gateway_id_hash(gw: *const D2dGateway, out: *mut u8) -> D2dStatus {
    guard(|| {
        let gw = gw.as_ref().ok_or(D2dStatus::NullPointer)?;
        write_block(out, gw.inner.id().id_hash().as_bytes())
    })
}

/// Register an edge over the trusted setup path and return its provisioned
/// state as a new edge handle. `seed` is the 32-byte shared DRBG seed.
#[no_mangle]
pub unsafe extern "C" fn d2d_gateway_enroll(
    gw: *mut D2dGateway,
    edge_id: *const u8,
    edge_id_len: usize,
    seed: *const u8,
    out: *mut *mut D2dEdge,
) -> D2dStatus {
    guard(|| {
        let gw = handle(gw)?;
        if out.is_null() {
            return Err(D2dStatus::NullPointer);
        }
        if edge_id_len == 0 {
            return Err(D2dStatus::InvalidArgument);
        }
        let id = DeviceId::new(bytes(edge_id, edge_id_len)?.to_vec());
        let edge = gw.inner.enroll(&id, Seed::new(block(seed)?))?;
        *out = Box::into_raw(Box::new(D2dEdge { inner: edge }));
        Ok(())
    })
}

/// Handle M1 received with CSI `csi[32]`; writes M2.
#[no_mangle]
pub unsafe extern "C" fn d2d_gateway_on_m1(
    gw: *mut D2dGateway,
    msg: *const u8,
    msg_len: usize,
    csi: *const u8,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
) -> D2dStatus {
    guard(|| {
        let gw = handle(gw)?;
        let m1 = decode(msg, msg_len)?;
        let reply = gw.inner.on_m1(&m1, CsiSample::from_bytes(block(csi)?))?;
        emit(&reply, out, out_cap, out_len)
    })
}

/// Handle M3; writes M4.
#[no_mangle]
pub unsafe extern "C" fn d2d_gateway_on_m3(
    gw: *mut D2dGateway,
    msg: *const u8,
    msg_len: usize,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
) -> D2dStatus {
    guard(|| {
        let gw = handle(gw)?;
        let reply = gw.inner.on_m3(&decode(msg, msg_len)?)?;
        emit(&reply, out, out_cap, out_len)
    })
}

/// Handle M5 from the edge whose id hash is `edge_id_hash[32]`. On `D2D_OK`
/// the session is live and started at `now_ms`.
#[no_mangle]
pub unsafe extern "C" fn d2d_gateway_on_m5(
    gw: *mut D2dGateway,
    edge_id_hash: *const u8,
    msg: *const u8,
    msg_len: usize,
    now_ms: u64,
) -> D2dStatus {
    guard(|| {
        let gw = handle(gw)?;
        let edge = Key256::from_bytes(block(edge_id_hash)?);
        gw.inner.on_m5(&edge, &decode(msg, msg_len)?, now_ms)?;
        Ok(())
    })
}

#[allow(clippy::too_many_arguments)]
unsafe fn point_x(
    gw: *mut D2dGateway,
    edge_id_hash: *const u8,
    m6: Option<ProtocolMessage>,
    now_ms: u64,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
    expired: *mut u8,
) -> FfiResult {
    let gw = handle(gw)?;
    if expired.is_null() {
        return Err(D2dStatus::NullPointer);
    }
    let edge = Key256::from_bytes(block(edge_id_hash)?);
    let entry = match &m6 {
        Some(m) => PointXEntry::M6(m),
        None => PointXEntry::Loop,
    };
    let outcome = gw.inner.point_x(&edge, entry, now_ms, &mut OsRng)?;
    emit(outcome.message(), out, out_cap, out_len)?;
    *expired = u8::from(matches!(outcome, PointXOutcome::Expired(_)));
    Ok(())
}

/// Handle the edge's M6 and issue the first M7. `*expired` is set to 1 when
/// the M7 carries ack=0 and the session has been dropped.
#[no_mangle]
pub unsafe extern "C" fn d2d_gateway_on_m6(
    gw: *mut D2dGateway,
    edge_id_hash: *const u8,
    msg: *const u8,
    msg_len: usize,
    now_ms: u64,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
    expired: *mut u8,
) -> D2dStatus {
    guard(|| {
        let m6 = decode(msg, msg_len)?;
        point_x(gw, edge_id_hash, Some(m6), now_ms, out, out_cap, out_len, expired)
    })
}

/// Issue the next M7 once a round has completed. Call every CA interval.
#[no_mangle]
pub unsafe extern "C" fn d2d_gateway_next_round(
    gw: *mut D2dGateway,
    edge_id_hash: *const u8,
    now_ms: u64,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
    expired: *mut u8,
) -> D2dStatus {
    guard(|| point_x(gw, edge_id_hash, None, now_ms, out, out_cap, out_len, expired))
}

/// Check the edge's M8. `*ctr` receives the completed round's counter.
#[no_mangle]
pub unsafe extern "C" fn d2d_gateway_on_m8(
    gw: *mut D2dGateway,
    edge_id_hash: *const u8,
    msg: *const u8,
    msg_len: usize,
    ctr: *mut u64,
) -> D2dStatus {
    guard(|| {
        let gw = handle(gw)?;
        if ctr.is_null() {
            return Err(D2dStatus::NullPointer);
        }
        let edge = Key256::from_bytes(block(edge_id_hash)?);
        let done = gw.inner.on_m8(&edge, &decode(msg, msg_len)?)?;
        *ctr = done.ctr;
        Ok(())
    })
}

/// Drop any handshake or session state held for an edge.
#[no_mangle]
pub unsafe extern "C" fn d2d_gateway_abort(gw: *mut D2dGateway, edge_id_hash: *const u8) -> D2dStatus {
    guard(|| {
        let gw = handle(gw)?;
        gw.inner.abort_session(&Key256::from_bytes(block(edge_id_hash)?));
        Ok(())
    })
}

/// Current session key for an edge; `D2D_OUT_OF_PHASE` if none is live.
#[no_mangle]
pub unsafe extern "C" fn d2d_gateway_session_key(
    gw: *const D2dGateway,
    edge_id_hash: *const u8,
    out: *mut u8,
) -> D2dStatus {
    guard(|| {
        let gw = gw.as_ref().ok_or(D2dStatus::NullPointer)?;
        let edge = Key256::from_bytes(block(edge_id_hash)?);
        let key = gw.inner.session(&edge).map(|s| s.sn_key()).filter(|k| !k.is_unset());
        write_block(out, key.ok_or(D2dStatus::OutOfPhase)?.as_bytes())
    })
}

// ---- edge ----

/// Rebuild an edge from stored enrollment output (`d2dauth enroll` prints
/// `e_init`, `seed` and `draw_index`).
#[no_mangle]
pub unsafe extern "C" fn d2d_edge_new(
    edge_id: *const u8,
    edge_id_len: usize,
    gw_id_hash: *const u8,
    e_init: *const u8,
    seed: *const u8,
    seed_draw_index: u64,
    cfg: D2dSessionConfig,
    out: *mut *mut D2dEdge,
) -> D2dStatus {
    guard(|| {
        if out.is_null() {
            return Err(D2dStatus::NullPointer);
        }
        if edge_id_len == 0 {
            return Err(D2dStatus::InvalidArgument);
        }
        let edge = EdgeState::provisioned(
            DeviceId::new(bytes(edge_id, edge_id_len)?.to_vec()),
            Key256::from_bytes(block(gw_id_hash)?),
            Key256::from_bytes(block(e_init)?),
            Seed::at_index(block(seed)?, seed_draw_index),
            config(cfg)?,
        );
        *out = Box::into_raw(Box::new(D2dEdge { inner: edge }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2d_edge_free(edge: *mut D2dEdge) {
    if !edge.is_null() {
        drop(Box::from_raw(edge));
    }
}

/// Writes H(edge id) to `out[32]`; the gateway keys its sessions by this.
#[no_mangle]
pub unsafe extern "C" fn d2d_edge_id_hash(edge: *const D2dEdge, out: *mut u8) -> D2dStatus {
    guard(|| {
        let edge = edge.as_ref().ok_or(D2dStatus::NullPointer)?;
        write_block(out, edge.inner.id().id_hash().as_bytes())
    })
}

/// Start (or restart) mutual authentication; writes M1.
#[no_mangle]
pub unsafe extern "C" fn d2d_edge_begin_auth(
    edge: *mut D2dEdge,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
) -> D2dStatus {
    guard(|| {
        let edge = handle(edge)?;
        let m1 = edge.inner.begin_auth()?;
        emit(&m1, out, out_cap, out_len)
    })
}

/// Handle M2 received with CSI `csi[32]`; writes M3.
#[no_mangle]
pub unsafe extern "C" fn d2d_edge_on_m2(
    edge: *mut D2dEdge,
    msg: *const u8,
    msg_len: usize,
    csi: *const u8,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
) -> D2dStatus {
    guard(|| {
        let edge = handle(edge)?;
        let m2 = decode(msg, msg_len)?;
        let m3 = edge.inner.on_m2(&m2, CsiSample::from_bytes(block(csi)?))?;
        emit(&m3, out, out_cap, out_len)
    })
}

/// Verify the gateway's M4; writes M5. On `D2D_OK` the edge holds the new session key.
#[no_mangle]
pub unsafe extern "C" fn d2d_edge_on_m4(
    edge: *mut D2dEdge,
    msg: *const u8,
    msg_len: usize,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
) -> D2dStatus {
    guard(|| {
        let edge = handle(edge)?;
        let m5 = edge.inner.on_m4(&decode(msg, msg_len)?, &mut OsRng)?;
        emit(&m5, out, out_cap, out_len)
    })
}

/// Open continuous authentication for this session; writes M6.
#[no_mangle]
pub unsafe extern "C" fn d2d_edge_ca_start(
    edge: *mut D2dEdge,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
) -> D2dStatus {
    guard(|| {
        let edge = handle(edge)?;
        let m6 = edge.inner.ca_start(&mut OsRng)?;
        emit(&m6, out, out_cap, out_len)
    })
}

/// Answer a CA challenge. Writes M8 and sets `*reauth = 0`, or, when the
/// gateway signalled expiry, writes nothing (`*out_len = 0`) and sets
/// `*reauth = 1`: call `d2d_edge_begin_auth` next.
#[no_mangle]
pub unsafe extern "C" fn d2d_edge_on_m7(
    edge: *mut D2dEdge,
    msg: *const u8,
    msg_len: usize,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
    reauth: *mut u8,
) -> D2dStatus {
    guard(|| {
        let edge = handle(edge)?;
        if reauth.is_null() || out_len.is_null() {
            return Err(D2dStatus::NullPointer);
        }
        match edge.inner.on_m7(&decode(msg, msg_len)?, &mut OsRng)? {
            M7Outcome::Respond(m8) => {
                emit(&m8, out, out_cap, out_len)?;
                *reauth = 0;
            }
            M7Outcome::GoToMutualAuth => {
                *out_len = 0;
                *reauth = 1;
            }
        }
        Ok(())
    })
}

/// Drop the current handshake so `d2d_edge_begin_auth` can start over.
#[no_mangle]
pub unsafe extern "C" fn d2d_edge_abort(edge: *mut D2dEdge) -> D2dStatus {
    guard(|| {
        handle(edge)?.inner.abort();
        Ok(())
    })
}

/// Current session key; `D2D_OUT_OF_PHASE` before the first authentication.
#[no_mangle]
pub unsafe extern "C" fn d2d_edge_session_key(edge: *const D2dEdge, out: *mut u8) -> D2dStatus {
    guard(|| {
        let edge = edge.as_ref().ok_or(D2dStatus::NullPointer)?;
        let key = edge.inner.sn_key();
        if key.is_unset() {
            return Err(D2dStatus::OutOfPhase);
        }
        write_block(out, key.as_bytes())
    })
}

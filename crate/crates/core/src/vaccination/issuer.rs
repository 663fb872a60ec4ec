//! The badge issuer's signing service.
//!
//! A request carries only digests and dose metadata: the PII binding inside
//! `badge_info` and `status_payload` is a hash or a tree root. The issuer
//! performs the registry transition and both signatures under one request
//! digest, so a retried request gets the same signatures back and never
//! moves the registry twice.

use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

use crate::canonical::{Canonical, DecodeError, MapBuilder, MapReader, Value};
use crate::coupon::verify_coupon;
use crate::crypto::{sha256, HashDigest, Signature, SigningKeyHandle, VerifyingKey};
use crate::registry::{Dose, Registry, RegistryError};
use crate::wire::frame::{read_frame, write_frame};

use super::credentials::{BadgeInfo, PiiBinding, StatusBinding, StatusPayload};

/// What the pharmacy submits for signing.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SignRequest {
    pub badge_info: BadgeInfo,
    pub status_payload: StatusPayload,
    /// For a second dose: the issuer's signature on the dose-1 badge, so the
    /// carried-over history can be checked.
    pub prior_badge_sig: Option<Signature>,
}

impl SignRequest {
    fn body_value(&self) -> Value {
        MapBuilder::new()
            .field("badge_info", self.badge_info.to_value())
            .opt_field("prior", self.prior_badge_sig.map(|s| s.to_value()))
            .field("status_payload", self.status_payload.to_value())
            .build()
    }

    pub fn digest(&self) -> HashDigest {
        sha256(&self.body_value().to_bytes())
    }
}

impl Canonical for SignRequest {
    fn to_value(&self) -> Value {
        let Value::Map(mut m) = self.body_value() else {
            unreachable!()
        };
        m.insert("request_digest".into(), self.digest().into());
        Value::Map(m)
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let req = SignRequest {
            badge_info: m.get("badge_info")?,
            prior_badge_sig: m.get_opt("prior")?,
            status_payload: m.get("status_payload")?,
        };
        let claimed: HashDigest = m.get("request_digest")?;
        m.finish()?;
        if claimed != req.digest() {
            return Err(DecodeError::Invalid {
                field: "request_digest",
                reason: "does not match request body".into(),
            });
        }
        Ok(req)
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SignError {
    #[error("coupon already used")]
    AlreadyUsed,
    #[error("coupon not in the state this dose requires")]
    WrongState,
    #[error("coupon signature invalid or from an unknown issuer")]
    BadCoupon,
    #[error("unknown coupon")]
    UnknownCoupon,
    #[error("second-dose product not permitted after the first")]
    ProductMismatch,
    #[error("prior badge signature missing or invalid")]
    BadPriorBadge,
    #[error("request fields inconsistent")]
    BadRequest,
    #[error("registry dismantled")]
    Dismantled,
    #[error("issuer internal error")]
    Internal,
}

impl SignError {
    pub fn code(self) -> &'static str {
        match self {
            SignError::AlreadyUsed => "already_used",
            SignError::WrongState => "wrong_state",
            SignError::BadCoupon => "bad_coupon",
            SignError::UnknownCoupon => "unknown_coupon",
            SignError::ProductMismatch => "product_mismatch",
            SignError::BadPriorBadge => "bad_prior_badge",
            SignError::BadRequest => "bad_request",
            SignError::Dismantled => "dismantled",
            SignError::Internal => "internal",
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        [
            SignError::AlreadyUsed,
            SignError::WrongState,
            SignError::BadCoupon,
            SignError::UnknownCoupon,
            SignError::ProductMismatch,
            SignError::BadPriorBadge,
            SignError::BadRequest,
            SignError::Dismantled,
            SignError::Internal,
        ]
        .into_iter()
        .find(|e| e.code() == s)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum SignResponse {
    Signed {
        sig_badge: Signature,
        sig_status: Signature,
    },
    Error(SignError),
}

impl Canonical for SignResponse {
    fn to_value(&self) -> Value {
        match self {
            SignResponse::Signed {
                sig_badge,
                sig_status,
            } => MapBuilder::new()
                .field("sig_badge", sig_badge.to_value())
                .field("sig_status", sig_status.to_value())
                .build(),
            SignResponse::Error(e) => MapBuilder::new().field("error", e.code()).build(),
        }
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let r = match m.take_opt("error") {
            Some(Value::Text(code)) => {
                SignResponse::Error(SignError::from_code(&code).ok_or(DecodeError::Invalid {
                    field: "error",
                    reason: format!("unknown code `{code}`"),
                })?)
            }
            Some(_) => return Err(DecodeError::FieldType("error")),
            None => SignResponse::Signed {
                sig_badge: m.get("sig_badge")?,
                sig_status: m.get("sig_status")?,
            },
        };
        m.finish()?;
        Ok(r)
    }
}

/// Which second-dose products may follow a first-dose product.
#[derive(Clone, Debug, Default)]
pub struct ProductRules {
    extra: Vec<(String, String)>,
}

impl ProductRules {
    /// Same product only.
    pub fn same_product() -> Self {
        Self::default()
    }

    /// Additionally permits `second` after `first`.
    pub fn allow(mut self, first: &str, second: &str) -> Self {
        self.extra.push((first.to_owned(), second.to_owned()));
        self
    }

    pub fn permits(&self, first: &str, second: &str) -> bool {
        first == second || self.extra.iter().any(|(a, b)| a == first && b == second)
    }
}

/// One-shot crash points for recovery tests.
#[derive(Debug, Default)]
pub struct FaultPlan {
    crash_before_registry: AtomicBool,
    crash_after_registry: AtomicBool,
}

impl FaultPlan {
    pub fn crash_before_registry(&self) {
        self.crash_before_registry.store(true, Ordering::SeqCst);
    }

    pub fn crash_after_registry(&self) {
        self.crash_after_registry.store(true, Ordering::SeqCst);
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("signing service unreachable")]
    Unreachable,
    #[error("signing service dropped the request")]
    Crashed,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub struct BadgeIssuer {
    key: SigningKeyHandle,
    coupon_keys: Vec<VerifyingKey>,
    registry: Arc<Registry>,
    rules: ProductRules,
    online: AtomicBool,
    faults: FaultPlan,
}

impl BadgeIssuer {
    pub fn new(key: SigningKeyHandle, coupon_keys: Vec<VerifyingKey>, registry: Arc<Registry>) -> Self {
        BadgeIssuer {
            key,
            coupon_keys,
            registry,
            rules: ProductRules::same_product(),
            online: AtomicBool::new(true),
            faults: FaultPlan::default(),
        }
    }

    pub fn with_rules(mut self, rules: ProductRules) -> Self {
        self.rules = rules;
        self
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn rules(&self) -> &ProductRules {
        &self.rules
    }

    pub fn set_online(&self, online: bool) {
        self.online.store(online, Ordering::SeqCst);
    }

    pub fn is_online(&self) -> bool {
        self.online.load(Ordering::SeqCst)
    }

    pub fn faults(&self) -> &FaultPlan {
        &self.faults
    }

    fn check_request(&self, req: &SignRequest) -> Result<Dose, SignError> {
        let info = &req.badge_info;
        if !self.coupon_keys.iter().any(|vk| verify_coupon(vk, &info.coupon)) {
            return Err(SignError::BadCoupon);
        }
        let status = &req.status_payload;
        let level_ok = status.level == info.level();
        let binding_ok = match (&info.pii_binding, &status.binding) {
            (PiiBinding::Commitment(_), StatusBinding::PasskeyHash(_)) => true,
            (PiiBinding::TreeRoot(r), StatusBinding::App { pii_root, .. }) => r == pii_root,
            _ => false,
        };
        let date_ok = status.date.map_or(true, |d| d == info.latest_dose().date);
        if !(level_ok && binding_ok && date_ok) {
            return Err(SignError::BadRequest);
        }
        match info.dose_history.as_slice() {
            [_] => {
                if req.prior_badge_sig.is_some() {
                    return Err(SignError::BadRequest);
                }
                Ok(Dose::First)
            }
            [d1, d2] => {
                let prior = BadgeInfo {
                    dose_history: vec![d1.clone()],
                    coupon: info.coupon.clone(),
                    pii_binding: info.pii_binding,
                };
                let sig = req.prior_badge_sig.ok_or(SignError::BadPriorBadge)?;
                if !crate::crypto::verify(&self.verifying_key(), &prior.canonical_bytes(), &sig) {
                    return Err(SignError::BadPriorBadge);
                }
                if d2.date < d1.date {
                    return Err(SignError::BadRequest);
                }
                if !self.rules.permits(&d1.product, &d2.product) {
                    return Err(SignError::ProductMismatch);
                }
                Ok(Dose::Second)
            }
            _ => Err(SignError::BadRequest),
        }
    }

    /// Registry transition plus both signatures. `Err(Crashed)` models the
    /// process dying at an injected fault point.
    pub fn sign_badge_request(&self, req: &SignRequest) -> Result<SignResponse, TransportError> {
        if !self.is_online() {
            return Err(TransportError::Unreachable);
        }
        let dose = match self.check_request(req) {
            Ok(d) => d,
            Err(e) => return Ok(SignResponse::Error(e)),
        };
        if self.faults.crash_before_registry.swap(false, Ordering::SeqCst) {
            return Err(TransportError::Crashed);
        }
        let outcome = self.registry.mark_used_for_request(
            &req.badge_info.coupon_id(),
            dose,
            req.badge_info.latest_dose().date,
            Some(req.digest()),
        );
        if let Err(e) = outcome {
            return Ok(SignResponse::Error(match e {
                RegistryError::AlreadyUsed if dose == Dose::First => SignError::AlreadyUsed,
                RegistryError::AlreadyUsed | RegistryError::InvalidTransition(_) => {
                    SignError::WrongState
                }
                RegistryError::UnknownCoupon => SignError::UnknownCoupon,
                RegistryError::Dismantled => SignError::Dismantled,
                _ => SignError::Internal,
            }));
        }
        if self.faults.crash_after_registry.swap(false, Ordering::SeqCst) {
            return Err(TransportError::Crashed);
        }
        // Ed25519 is deterministic, so a replayed request gets identical
        // signatures.
        Ok(SignResponse::Signed {
            sig_badge: crate::crypto::sign(&self.key, &req.badge_info.canonical_bytes()),
            sig_status: crate::crypto::sign(&self.key, &req.status_payload.canonical_bytes()),
        })
    }

    /// Decodes a request frame body and encodes the response body.
    pub fn handle_bytes(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        let response = match SignRequest::from_canonical_bytes(request) {
            Ok(req) => self.sign_badge_request(&req)?,
            Err(_) => SignResponse::Error(SignError::BadRequest),
        };
        Ok(response.canonical_bytes())
    }
}

/// Carries one encoded request to the signing service.
pub trait SigningTransport {
    fn round_trip(&self, request: &[u8]) -> Result<Vec<u8>, TransportError>;
}

impl<T: SigningTransport + ?Sized> SigningTransport for &T {
    fn round_trip(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        (**self).round_trip(request)
    }
}

impl<T: SigningTransport + ?Sized> SigningTransport for Arc<T> {
    fn round_trip(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        (**self).round_trip(request)
    }
}

/// In-process transport; still passes through the frame encoding.
#[derive(Clone)]
pub struct LocalTransport {
    issuer: Arc<BadgeIssuer>,
}

impl LocalTransport {
    pub fn new(issuer: Arc<BadgeIssuer>) -> Self {
        LocalTransport { issuer }
    }
}

impl SigningTransport for LocalTransport {
    fn round_trip(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        let mut wire = Vec::new();
        write_frame(&mut wire, request).map_err(|e| TransportError::Io(e.to_string()))?;
        let body = read_frame(&mut wire.as_slice()).map_err(|e| TransportError::Io(e.to_string()))?;
        self.issuer.handle_bytes(&body)
    }
}

/// Records every request byte string that passes through.
pub struct RecordingTransport<T> {
    inner: T,
    seen: Mutex<Vec<Vec<u8>>>,
}

impl<T> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        RecordingTransport {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn messages(&self) -> Vec<Vec<u8>> {
        self.seen.lock().clone()
    }
}

impl<T: SigningTransport> SigningTransport for RecordingTransport<T> {
    fn round_trip(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        self.seen.lock().push(request.to_vec());
        self.inner.round_trip(request)
    }
}

/// Length-prefixed request/response over TCP, one connection per request.
pub struct TcpTransport {
    addr: String,
}

impl TcpTransport {
    pub fn new(addr: impl Into<String>) -> Self {
        TcpTransport { addr: addr.into() }
    }
}

impl SigningTransport for TcpTransport {
    fn round_trip(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        let addrs: Vec<_> = self
            .addr
            .to_socket_addrs()
            .map_err(|_| TransportError::Unreachable)?
            .collect();
        let stream = TcpStream::connect(&addrs[..]).map_err(|_| TransportError::Unreachable)?;
        let mut w = BufWriter::new(&stream);
        write_frame(&mut w, request).map_err(|e| TransportError::Io(e.to_string()))?;
        drop(w);
        read_frame(&mut BufReader::new(&stream)).map_err(|_| TransportError::Crashed)
    }
}

/// Serves signing requests until `max_requests` have been handled (or
/// forever when `None`). Each connection runs on its own thread; the
/// registry provides all cross-request synchronization.
pub fn serve(
    listener: TcpListener,
    issuer: Arc<BadgeIssuer>,
    max_requests: Option<usize>,
) -> std::io::Result<()> {
    let mut handles = Vec::new();
    for (n, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let issuer = Arc::clone(&issuer);
        handles.push(std::thread::spawn(move || {
            let mut reader = BufReader::new(&stream);
            let Ok(body) = read_frame(&mut reader) else {
                return;
            };
            if let Ok(resp) = issuer.handle_bytes(&body) {
                let _ = write_frame(&mut BufWriter::new(&stream), &resp);
            }
        }));
        if max_requests.is_some_and(|m| n + 1 >= m) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

/// Sends a request and decodes the response.
pub fn request_signatures<T: SigningTransport>(
    transport: &T,
    req: &SignRequest,
) -> Result<SignResponse, TransportError> {
    let bytes = transport.round_trip(&req.canonical_bytes())?;
    SignResponse::from_canonical_bytes(&bytes).map_err(|e| TransportError::Malformed(e.to_string()))
}


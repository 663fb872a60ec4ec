//! QR text payloads: `<PREFIX><base32 of canonical bytes>`.
//!
//! Bodies use the RFC 4648 base-32 alphabet without padding, which keeps the
//! text inside the QR alphanumeric character set. Lower-case bodies are
//! accepted on decode so scanners that fold case still round-trip.

use data_encoding::BASE32_NOPAD;
use thiserror::Error;

use crate::canonical::{Canonical, DecodeError};
use crate::verification::TrustAnchors;

/// Upper bound on the length of any QR text, prefix included.
pub const MAX_QR_LEN: usize = 2048;

pub const COUPON_PREFIX: &str = "CPN1:";
pub const BADGE_PREFIX: &str = "BDG1:";
pub const STATUS_PREFIX: &str = "STS1:";
pub const PASSKEY_PREFIX: &str = "PSK1:";
pub const PRESENTATION_PREFIX: &str = "PRS1:";
pub const VENUE_PREFIX: &str = "VEN1:";

pub const ALL_PREFIXES: [&str; 6] = [
    COUPON_PREFIX,
    BADGE_PREFIX,
    STATUS_PREFIX,
    PASSKEY_PREFIX,
    PRESENTATION_PREFIX,
    VENUE_PREFIX,
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QrError {
    #[error("unknown or mismatched prefix (expected {expected})")]
    UnknownPrefix { expected: &'static str },
    #[error("payload is {0} characters, over the {MAX_QR_LEN} limit")]
    TooLong(usize),
    #[error("invalid base32 body")]
    Base32,
    #[error("malformed payload: {0}")]
    Decode(#[from] DecodeError),
    #[error("embedded signature invalid")]
    BadSignature,
}

/// A credential that travels as QR text.
pub trait QrPayload: Canonical {
    const PREFIX: &'static str;

    /// Checks every signature carried by the payload against the anchors.
    fn verify_embedded(&self, anchors: &TrustAnchors) -> bool;
}

pub fn encode_qr<T: QrPayload>(payload: &T) -> String {
    let body = BASE32_NOPAD.encode(&payload.canonical_bytes());
    let mut out = String::with_capacity(T::PREFIX.len() + body.len());
    out.push_str(T::PREFIX);
    out.push_str(&body);
    out
}

/// Encodes and enforces the length limit.
pub fn try_encode_qr<T: QrPayload>(payload: &T) -> Result<String, QrError> {
    let text = encode_qr(payload);
    if text.len() > MAX_QR_LEN {
        return Err(QrError::TooLong(text.len()));
    }
    Ok(text)
}

/// Prefix, length and structure checks only.
pub fn decode_qr_unverified<T: QrPayload>(text: &str) -> Result<T, QrError> {
    let text = text.trim();
    if text.len() > MAX_QR_LEN {
        return Err(QrError::TooLong(text.len()));
    }
    let body = text
        .strip_prefix(T::PREFIX)
        .ok_or(QrError::UnknownPrefix { expected: T::PREFIX })?;
    let bytes = BASE32_NOPAD
        .decode(body.to_ascii_uppercase().as_bytes())
        .map_err(|_| QrError::Base32)?;
    Ok(T::from_canonical_bytes(&bytes)?)
}

/// Full decode: structure plus re-verification of embedded signatures.
pub fn decode_qr<T: QrPayload>(text: &str, anchors: &TrustAnchors) -> Result<T, QrError> {
    let payload: T = decode_qr_unverified(text)?;
    if !payload.verify_embedded(anchors) {
        return Err(QrError::BadSignature);
    }
    Ok(payload)
}

/// Returns the known prefix a text starts with, if any.
pub fn sniff_prefix(text: &str) -> Option<&'static str> {
    let text = text.trim();
    ALL_PREFIXES.into_iter().find(|p| text.starts_with(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupon::{issue_coupon_batch, Coupon};
    use crate::crypto::generate_keypair;
    use crate::registry::Registry;

    fn coupon() -> (Coupon, TrustAnchors) {
        let (h, vk) = generate_keypair().unwrap();
        let reg = Registry::new();
        let c = issue_coupon_batch(&h, &reg, 1, "02139", "healthcare").unwrap()[0].clone();
        (c, TrustAnchors::single(vk))
    }

    #[test]
    fn coupon_round_trip() {
        let (c, anchors) = coupon();
        let text = encode_qr(&c);
        assert!(text.starts_with("CPN1:"));
        assert_eq!(decode_qr::<Coupon>(&text, &anchors).unwrap(), c);
        assert_eq!(
            decode_qr::<Coupon>(&text.to_ascii_lowercase().replacen("cpn1:", "CPN1:", 1), &anchors)
                .unwrap(),
            c
        );
    }

    #[test]
    fn wrong_prefix_is_rejected() {
        let (c, anchors) = coupon();
        let text = encode_qr(&c).replacen("CPN1:", "BDG1:", 1);
        assert_eq!(
            decode_qr::<Coupon>(&text, &anchors),
            Err(QrError::UnknownPrefix { expected: "CPN1:" })
        );
    }

    #[test]
    fn foreign_anchor_fails_signature() {
        let (c, _) = coupon();
        let (_, other) = generate_keypair().unwrap();
        assert_eq!(
            decode_qr::<Coupon>(&encode_qr(&c), &TrustAnchors::single(other)),
            Err(QrError::BadSignature)
        );
    }

    #[test]
    fn oversize_and_garbage_inputs() {
        let (_, anchors) = coupon();
        let long = format!("CPN1:{}", "A".repeat(MAX_QR_LEN));
        assert_eq!(
            decode_qr::<Coupon>(&long, &anchors),
            Err(QrError::TooLong(MAX_QR_LEN + 5))
        );
        assert_eq!(
            decode_qr::<Coupon>("CPN1:!!", &anchors),
            Err(QrError::Base32)
        );
        assert!(matches!(
            decode_qr::<Coupon>("CPN1:AE", &anchors),
            Err(QrError::Decode(_))
        ));
    }

    #[test]
    fn sniffing() {
        assert_eq!(sniff_prefix(" STS1:ABC"), Some(STATUS_PREFIX));
        assert_eq!(sniff_prefix("XYZ1:ABC"), None);
    }
}

//! Venue identity, channel-key certificates and the three ways a user can
//! come to trust a venue's channel key.

use data_encoding::BASE32_NOPAD;

use crate::canonical::{Canonical, DecodeError, MapBuilder, MapReader, Value};
use crate::crypto::{self, sha256, HashDigest, Signature, SigningKeyHandle, VerifyingKey};
use crate::verification::TrustAnchors;
use crate::wire::qr::{QrPayload, VENUE_PREFIX};

/// Length of the short code a venue displays for manual entry.
pub const SHORT_CODE_LEN: usize = 6;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VenueCert {
    IssuerSigned(Signature),
    SelfSigned,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct VenueIdentity {
    pub venue_id: String,
    pub channel_pk: VerifyingKey,
    pub cert: VenueCert,
}

fn cert_message(venue_id: &str, channel_pk: &VerifyingKey) -> Vec<u8> {
    MapBuilder::new()
        .field("channel_pk", channel_pk.to_value())
        .field("purpose", "venue-channel")
        .field("venue_id", venue_id)
        .build()
        .to_bytes()
}

impl VenueIdentity {
    pub fn issuer_signed(issuer: &SigningKeyHandle, venue_id: &str, channel_pk: VerifyingKey) -> Self {
        let sig = crypto::sign(issuer, &cert_message(venue_id, &channel_pk));
        VenueIdentity {
            venue_id: venue_id.to_owned(),
            channel_pk,
            cert: VenueCert::IssuerSigned(sig),
        }
    }

    pub fn self_signed(venue_id: &str, channel_pk: VerifyingKey) -> Self {
        VenueIdentity {
            venue_id: venue_id.to_owned(),
            channel_pk,
            cert: VenueCert::SelfSigned,
        }
    }

    /// Digest a venue prints in its QR code for pinning.
    pub fn cert_digest(&self) -> HashDigest {
        sha256(&self.canonical_bytes())
    }

    /// Short code a venue shows for manual entry.
    pub fn short_code(&self) -> String {
        short_code_for(&self.channel_pk)
    }

    pub fn issuer_cert_valid(&self, issuers: &[VerifyingKey]) -> bool {
        match self.cert {
            VenueCert::IssuerSigned(sig) => {
                let msg = cert_message(&self.venue_id, &self.channel_pk);
                issuers.iter().any(|vk| crypto::verify(vk, &msg, &sig))
            }
            VenueCert::SelfSigned => false,
        }
    }
}

pub fn short_code_for(channel_pk: &VerifyingKey) -> String {
    let digest = sha256(channel_pk.as_bytes());
    BASE32_NOPAD.encode(digest.as_bytes())[..SHORT_CODE_LEN].to_owned()
}

impl Canonical for VenueIdentity {
    fn to_value(&self) -> Value {
        let cert = match self.cert {
            VenueCert::IssuerSigned(sig) => MapBuilder::new().field("kind", "issuer").field("sig", sig.to_value()),
            VenueCert::SelfSigned => MapBuilder::new().field("kind", "self"),
        };
        MapBuilder::new()
            .field("cert", cert.build())
            .field("channel_pk", self.channel_pk.to_value())
            .field("venue_id", self.venue_id.as_str())
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let mut c = MapReader::new(m.take("cert")?)?;
        let cert = match c.text("kind")?.as_str() {
            "issuer" => VenueCert::IssuerSigned(c.get("sig")?),
            "self" => VenueCert::SelfSigned,
            other => {
                return Err(DecodeError::Invalid {
                    field: "kind",
                    reason: format!("unknown cert kind `{other}`"),
                })
            }
        };
        c.finish()?;
        let id = VenueIdentity {
            cert,
            channel_pk: m.get("channel_pk")?,
            venue_id: m.text("venue_id")?,
        };
        m.finish()?;
        Ok(id)
    }
}

impl QrPayload for VenueIdentity {
    const PREFIX: &'static str = VENUE_PREFIX;

    fn verify_embedded(&self, anchors: &TrustAnchors) -> bool {
        match self.cert {
            VenueCert::IssuerSigned(_) => {
                self.issuer_cert_valid(&anchors.coupon_issuers) || self.issuer_cert_valid(&anchors.badge_issuers)
            }
            VenueCert::SelfSigned => true,
        }
    }
}

/// How the user decides to trust the venue's channel key.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum TrustMode {
    /// The certificate must verify under one of these issuer keys.
    IssuerSigned(Vec<VerifyingKey>),
    /// Digest scanned from the venue's QR code.
    QrPinned(HashDigest),
    /// Short code typed in by the user.
    CodePinned(String),
}

impl TrustMode {
    pub fn accepts(&self, identity: &VenueIdentity) -> bool {
        match self {
            TrustMode::IssuerSigned(keys) => identity.issuer_cert_valid(keys),
            TrustMode::QrPinned(d) => identity.cert_digest() == *d,
            TrustMode::CodePinned(code) => code.trim().eq_ignore_ascii_case(&identity.short_code()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_keypair;

    #[test]
    fn issuer_signed_identity() {
        let (issuer, issuer_vk) = generate_keypair().unwrap();
        let (_, channel) = generate_keypair().unwrap();
        let id = VenueIdentity::issuer_signed(&issuer, "stadium", channel);
        assert!(TrustMode::IssuerSigned(vec![issuer_vk]).accepts(&id));
        let (_, other) = generate_keypair().unwrap();
        assert!(!TrustMode::IssuerSigned(vec![other]).accepts(&id));
        let mut renamed = id.clone();
        renamed.venue_id = "arena".into();
        assert!(!TrustMode::IssuerSigned(vec![issuer_vk]).accepts(&renamed));
        assert!(!TrustMode::IssuerSigned(vec![issuer_vk]).accepts(&VenueIdentity::self_signed("stadium", channel)));
    }

    #[test]
    fn qr_pin_rejects_substituted_key() {
        let (_, channel) = generate_keypair().unwrap();
        let (_, mitm) = generate_keypair().unwrap();
        let id = VenueIdentity::self_signed("club", channel);
        let pin = TrustMode::QrPinned(id.cert_digest());
        assert!(pin.accepts(&id));
        assert!(!pin.accepts(&VenueIdentity::self_signed("club", mitm)));
    }

    #[test]
    fn short_code_is_prefix_of_key_digest() {
        let (_, channel) = generate_keypair().unwrap();
        let id = VenueIdentity::self_signed("club", channel);
        let code = id.short_code();
        assert_eq!(code.len(), SHORT_CODE_LEN);
        let full = BASE32_NOPAD.encode(&sha2_oracle(channel.as_bytes()));
        assert!(full.starts_with(&code));
        assert!(TrustMode::CodePinned(code.to_lowercase()).accepts(&id));
        let mut wrong: Vec<char> = code.chars().collect();
        wrong[3] = if wrong[3] == 'A' { 'B' } else { 'A' };
        assert!(!TrustMode::CodePinned(wrong.into_iter().collect()).accepts(&id));
    }

    fn sha2_oracle(bytes: &[u8]) -> Vec<u8> {
        use sha2::Digest;
        sha2::Sha256::digest(bytes).to_vec()
    }

    #[test]
    fn identity_round_trip() {
        let (issuer, _) = generate_keypair().unwrap();
        let (_, channel) = generate_keypair().unwrap();
        for id in [
            VenueIdentity::issuer_signed(&issuer, "hall", channel),
            VenueIdentity::self_signed("hall", channel),
        ] {
            assert_eq!(VenueIdentity::from_canonical_bytes(&id.canonical_bytes()).unwrap(), id);
        }
    }
}

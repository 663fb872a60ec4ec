//! Venue-side checks of presented credentials, plus an audit of what a set
//! of venue transcripts lets colluding venues link.
//!
//! Everything here is total: malformed input yields a typed rejection. None
//! of these functions applies an admission policy; a valid `NotVaccinated`
//! status verifies as authentic and the caller decides what to do with it.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::canonical::Canonical;
use crate::coupon::{verify_coupon, Coupon};
use crate::crypto::{verify_disclosure, HashDigest, VerifyingKey};
use crate::registry::CouponId;
use crate::vaccination::{Badge, DoseInfo, Passkey, PiiBinding, Status, StatusBinding, VaccinationLevel};
use crate::wallet::Presentation;
use crate::wire::qr::{QrPayload, BADGE_PREFIX, COUPON_PREFIX, PASSKEY_PREFIX, STATUS_PREFIX};

/// Keys a verifier accepts. Coupon and badge issuers may be distinct.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrustAnchors {
    pub coupon_issuers: Vec<VerifyingKey>,
    pub badge_issuers: Vec<VerifyingKey>,
}

impl TrustAnchors {
    /// One key acting as both coupon and badge issuer.
    pub fn single(vk: VerifyingKey) -> Self {
        TrustAnchors {
            coupon_issuers: vec![vk],
            badge_issuers: vec![vk],
        }
    }

    pub fn new(coupon_issuers: Vec<VerifyingKey>, badge_issuers: Vec<VerifyingKey>) -> Self {
        TrustAnchors {
            coupon_issuers,
            badge_issuers,
        }
    }

    pub fn accepts_coupon(&self, c: &Coupon) -> bool {
        self.coupon_issuers.iter().any(|vk| verify_coupon(vk, c))
    }
}

impl QrPayload for Coupon {
    const PREFIX: &'static str = COUPON_PREFIX;

    fn verify_embedded(&self, anchors: &TrustAnchors) -> bool {
        anchors.accepts_coupon(self)
    }
}

impl QrPayload for Badge {
    const PREFIX: &'static str = BADGE_PREFIX;

    fn verify_embedded(&self, anchors: &TrustAnchors) -> bool {
        verify_badge(&anchors.badge_issuers, self).is_ok() && anchors.accepts_coupon(&self.info.coupon)
    }
}

impl QrPayload for Status {
    const PREFIX: &'static str = STATUS_PREFIX;

    fn verify_embedded(&self, anchors: &TrustAnchors) -> bool {
        verify_status(&anchors.badge_issuers, self).is_ok()
    }
}

impl QrPayload for Passkey {
    const PREFIX: &'static str = PASSKEY_PREFIX;

    fn verify_embedded(&self, _: &TrustAnchors) -> bool {
        true
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("credential invalid")]
pub struct Invalid;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedBadge {
    pub doses: Vec<DoseInfo>,
    pub binding: PiiBinding,
    pub coupon_id: CouponId,
    pub level: VaccinationLevel,
}

pub fn verify_badge(keys: &[VerifyingKey], badge: &Badge) -> Result<ParsedBadge, Invalid> {
    if !keys.iter().any(|vk| badge.verifies_under(vk)) {
        return Err(Invalid);
    }
    Ok(ParsedBadge {
        doses: badge.info.dose_history.clone(),
        binding: badge.info.pii_binding,
        coupon_id: badge.info.coupon_id(),
        level: badge.info.level(),
    })
}

pub fn verify_badge_bytes(keys: &[VerifyingKey], bytes: &[u8]) -> Result<ParsedBadge, Invalid> {
    verify_badge(keys, &Badge::from_canonical_bytes(bytes).map_err(|_| Invalid)?)
}

pub fn verify_status(keys: &[VerifyingKey], status: &Status) -> Result<VaccinationLevel, Invalid> {
    if keys.iter().any(|vk| status.verifies_under(vk)) {
        Ok(status.payload.level)
    } else {
        Err(Invalid)
    }
}

pub fn verify_status_bytes(keys: &[VerifyingKey], bytes: &[u8]) -> Result<VaccinationLevel, Invalid> {
    verify_status(keys, &Status::from_canonical_bytes(bytes).map_err(|_| Invalid)?)
}

#[derive(Clone, Copy, Debug)]
pub enum BoundCredential<'a> {
    Badge(&'a Badge),
    Status(&'a Status),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("credential carries an app binding, not a passkey commitment")]
pub struct VariantMismatch;

/// Whether a passkey opens the commitment carried by a paper-card
/// credential. Signatures are not checked here.
pub fn verify_passkey_binding(cred: BoundCredential<'_>, passkey: &Passkey) -> Result<bool, VariantMismatch> {
    match cred {
        BoundCredential::Badge(b) => match b.info.pii_binding {
            PiiBinding::Commitment(c) => Ok(c == passkey.commitment()),
            PiiBinding::TreeRoot(_) => Err(VariantMismatch),
        },
        BoundCredential::Status(s) => match s.payload.binding {
            StatusBinding::PasskeyHash(h) => Ok(h == passkey.hash()),
            StatusBinding::App { .. } => Err(VariantMismatch),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub level: VaccinationLevel,
    pub disclosed: BTreeMap<String, String>,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum Reject {
    #[error("malformed presentation")]
    Malformed,
    #[error("signature invalid")]
    BadSignature,
    #[error("requested details were not disclosed")]
    InsufficientDisclosure,
    #[error("disclosure does not match the credential binding")]
    BindingMismatch,
    #[error("presentation type does not match the credential variant")]
    VariantMismatch,
}

pub fn verify_presentation<S: AsRef<str>>(
    keys: &[VerifyingKey],
    p: &Presentation,
    requested: &[S],
) -> Result<Verdict, Reject> {
    let (level, disclosed) = match p {
        Presentation::BadgeOnly(b) => (verify_badge(keys, b).map_err(|_| Reject::BadSignature)?.level, BTreeMap::new()),
        Presentation::StatusOnly(s) => (verify_status(keys, s).map_err(|_| Reject::BadSignature)?, BTreeMap::new()),
        Presentation::StatusWithPasskey { status, passkey } => {
            let level = verify_status(keys, status).map_err(|_| Reject::BadSignature)?;
            match verify_passkey_binding(BoundCredential::Status(status), passkey) {
                Ok(true) => {}
                Ok(false) => return Err(Reject::BindingMismatch),
                Err(VariantMismatch) => return Err(Reject::VariantMismatch),
            }
            (level, passkey.pii.iter().cloned().collect())
        }
        Presentation::StatusWithDisclosure { status, proof } => {
            let level = verify_status(keys, status).map_err(|_| Reject::BadSignature)?;
            let StatusBinding::App { pii_root, .. } = status.payload.binding else {
                return Err(Reject::VariantMismatch);
            };
            if !verify_disclosure(&pii_root, proof) {
                return Err(Reject::BindingMismatch);
            }
            let disclosed = proof
                .entries()
                .map(|(l, v)| (l.to_owned(), v.to_owned()))
                .collect();
            (level, disclosed)
        }
    };
    if requested.iter().any(|l| !disclosed.contains_key(l.as_ref())) {
        return Err(Reject::InsufficientDisclosure);
    }
    Ok(Verdict { level, disclosed })
}

pub fn verify_presentation_bytes<S: AsRef<str>>(
    keys: &[VerifyingKey],
    bytes: &[u8],
    requested: &[S],
) -> Result<Verdict, Reject> {
    let p = Presentation::from_canonical_bytes(bytes).map_err(|_| Reject::Malformed)?;
    verify_presentation(keys, &p, requested)
}

/// What one venue received from one visitor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VenueTranscript {
    pub venue: String,
    pub received: Vec<u8>,
}

impl VenueTranscript {
    pub fn new(venue: &str, p: &Presentation) -> Self {
        VenueTranscript {
            venue: venue.to_owned(),
            received: p.canonical_bytes(),
        }
    }
}

/// Stable identifiers a venue can extract from a presentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkKey {
    PiiCommitment,
    PasskeyHash,
    PiiRoot,
    UserPk,
    CouponId,
}

fn identifiers(bytes: &[u8]) -> BTreeSet<(LinkKey, HashDigest)> {
    let mut ids = BTreeSet::new();
    let Ok(p) = Presentation::from_canonical_bytes(bytes) else {
        return ids;
    };
    let from_status = |s: &Status, ids: &mut BTreeSet<_>| match s.payload.binding {
        StatusBinding::PasskeyHash(h) => {
            ids.insert((LinkKey::PasskeyHash, h));
        }
        StatusBinding::App { user_pk, pii_root } => {
            ids.insert((LinkKey::UserPk, user_pk.fingerprint()));
            ids.insert((LinkKey::PiiRoot, pii_root));
        }
    };
    match &p {
        Presentation::BadgeOnly(b) => {
            ids.insert((LinkKey::CouponId, b.info.coupon_id().0));
            ids.insert(match b.info.pii_binding {
                PiiBinding::Commitment(c) => (LinkKey::PiiCommitment, c),
                PiiBinding::TreeRoot(r) => (LinkKey::PiiRoot, r),
            });
        }
        Presentation::StatusOnly(s) => from_status(s, &mut ids),
        Presentation::StatusWithPasskey { status, passkey } => {
            from_status(status, &mut ids);
            ids.insert((LinkKey::PiiCommitment, passkey.commitment()));
            ids.insert((LinkKey::PasskeyHash, passkey.hash()));
        }
        Presentation::StatusWithDisclosure { status, proof } => {
            from_status(status, &mut ids);
            ids.insert((LinkKey::PiiRoot, proof.root));
        }
    }
    ids
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkedPair {
    pub a: usize,
    pub b: usize,
    pub via: BTreeSet<LinkKey>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkageReport {
    pub pairs: Vec<LinkedPair>,
}

impl LinkageReport {
    pub fn linkable(&self, a: usize, b: usize) -> bool {
        self.via(a, b).is_some()
    }

    pub fn via(&self, a: usize, b: usize) -> Option<&BTreeSet<LinkKey>> {
        let (a, b) = (a.min(b), a.max(b));
        self.pairs.iter().find(|p| p.a == a && p.b == b).map(|p| &p.via)
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("linkage audit needs at least two transcripts")]
pub struct TooFewTranscripts;

/// Reports every transcript pair sharing a stable identifier.
pub fn linkage_audit(transcripts: &[VenueTranscript]) -> Result<LinkageReport, TooFewTranscripts> {
    if transcripts.len() < 2 {
        return Err(TooFewTranscripts);
    }
    let ids: Vec<_> = transcripts.iter().map(|t| identifiers(&t.received)).collect();
    let mut pairs = Vec::new();
    for a in 0..ids.len() {
        for b in a + 1..ids.len() {
            let via: BTreeSet<LinkKey> = ids[a].intersection(&ids[b]).map(|(k, _)| *k).collect();
            if !via.is_empty() {
                pairs.push(LinkedPair { a, b, via });
            }
        }
    }
    Ok(LinkageReport { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupon::issue_coupon_batch;
    use crate::crypto::{build_pii_tree, generate_keypair, prove_disclosure, SigningKeyHandle};
    use crate::registry::Registry;
    use crate::vaccination::{BadgeInfo, StatusPayload};
    use crate::wallet::{wallet_init_app, Consent, PresentationKind, WalletState};
    use crate::vaccination::{BadgeIssuer, LocalTransport, PharmacySession};
    use chrono::NaiveDate;
    use rand::rngs::OsRng;
    use std::sync::Arc;

    fn day(n: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, 1).unwrap() + chrono::Days::new(n)
    }

    struct World {
        key: SigningKeyHandle,
        vk: VerifyingKey,
        coupons: Vec<Coupon>,
        session: PharmacySession<LocalTransport>,
    }

    fn world(n: u64) -> World {
        let (key, vk) = generate_keypair().unwrap();
        let registry = Arc::new(Registry::new());
        let coupons = issue_coupon_batch(&key, &registry, n, "02139", "healthcare").unwrap();
        let issuer = Arc::new(BadgeIssuer::new(key.clone(), vec![vk], registry));
        let session = PharmacySession::new("S-1", day(60), vec![vk], vk, LocalTransport::new(issuer));
        World {
            key,
            vk,
            coupons,
            session,
        }
    }

    fn pii(name: &str) -> Vec<(String, String)> {
        vec![("name".into(), name.into()), ("dob".into(), "1990-01-01".into())]
    }

    fn dose(n: u8, d: u64) -> DoseInfo {
        DoseInfo::new("VAX-A", "L-1", day(d), n, "S-1")
    }

    fn paper(w: &mut World, i: usize, name: &str) -> WalletState {
        let issued = w
            .session
            .issue_credentials_paper(&w.coupons[i], dose(1, 0), pii(name), &mut OsRng)
            .unwrap();
        let mut s = WalletState::new_paper(None);
        s.store(issued).unwrap();
        s
    }

    fn app(w: &mut World, i: usize, name: &str) -> WalletState {
        let mut s = wallet_init_app(w.coupons[i].clone(), &pii(name)).unwrap();
        let issued = w
            .session
            .issue_credentials_app(&w.coupons[i], dose(1, 0), s.pii_root().unwrap(), s.public_key().unwrap())
            .unwrap();
        s.store(issued).unwrap();
        s
    }

    #[test]
    fn badge_checks() {
        let mut w = world(1);
        let s = paper(&mut w, 0, "Ada");
        let badge = s.badge().unwrap().clone();
        assert_eq!(verify_badge(&[w.vk], &badge).unwrap().doses.len(), 1);
        let mut mutated = badge.clone();
        mutated.info.dose_history[0].date = day(1);
        assert_eq!(verify_badge(&[w.vk], &mutated), Err(Invalid));
        let (_, other) = generate_keypair().unwrap();
        assert_eq!(verify_badge(&[other], &badge), Err(Invalid));
        assert_eq!(verify_badge_bytes(&[w.vk], b"\x05garbage"), Err(Invalid));
    }

    #[test]
    fn status_checks_and_policy_separation() {
        let w = world(1);
        let mk = |level| {
            Status::sign(
                &w.key,
                StatusPayload {
                    level,
                    binding: StatusBinding::PasskeyHash(HashDigest([3; 32])),
                    date: None,
                },
            )
        };
        assert_eq!(verify_status(&[w.vk], &mk(VaccinationLevel::Fully)), Ok(VaccinationLevel::Fully));
        assert_eq!(
            verify_status(&[w.vk], &mk(VaccinationLevel::NotVaccinated)),
            Ok(VaccinationLevel::NotVaccinated)
        );
        let mut flipped = mk(VaccinationLevel::Dose1);
        flipped.payload.level = VaccinationLevel::Fully;
        assert_eq!(verify_status(&[w.vk], &flipped), Err(Invalid));
    }

    #[test]
    fn status_verification_is_total_over_byte_flips() {
        let w = world(1);
        let s = Status::sign(
            &w.key,
            StatusPayload {
                level: VaccinationLevel::Fully,
                binding: StatusBinding::PasskeyHash(HashDigest([3; 32])),
                date: Some(day(0)),
            },
        );
        let bytes = s.canonical_bytes();
        for i in 0..bytes.len() {
            for bit in 0..8 {
                let mut b = bytes.clone();
                b[i] ^= 1 << bit;
                assert_eq!(verify_status_bytes(&[w.vk], &b), Err(Invalid), "byte {i} bit {bit}");
            }
        }
        for cut in 0..bytes.len() {
            assert_eq!(verify_status_bytes(&[w.vk], &bytes[..cut]), Err(Invalid));
        }
    }

    #[test]
    fn passkey_binding() {
        let mut w = world(3);
        let a = paper(&mut w, 0, "Ada");
        let b = paper(&mut w, 1, "Bob");
        let pk_a = a.passkey().unwrap();
        for cred in [BoundCredential::Status(a.status().unwrap()), BoundCredential::Badge(a.badge().unwrap())] {
            assert_eq!(verify_passkey_binding(cred, pk_a), Ok(true));
            assert_eq!(verify_passkey_binding(cred, b.passkey().unwrap()), Ok(false));
            let mut salted = pk_a.clone();
            salted.salt.0[0] ^= 1;
            assert_eq!(verify_passkey_binding(cred, &salted), Ok(false));
        }
        let c = app(&mut w, 2, "Cy");
        assert_eq!(
            verify_passkey_binding(BoundCredential::Status(c.status().unwrap()), pk_a),
            Err(VariantMismatch)
        );
    }

    #[test]
    fn presentation_verdicts() {
        let mut w = world(2);
        let s = app(&mut w, 0, "Ada");
        let p = s
            .present(PresentationKind::StatusWithDisclosure, &Consent::labels(&["name"]))
            .unwrap();
        let v = verify_presentation(&[w.vk], &p, &["name"]).unwrap();
        assert_eq!(v.level, VaccinationLevel::Dose1);
        assert_eq!(v.disclosed.into_iter().collect::<Vec<_>>(), vec![("name".into(), "Ada".into())]);
        assert_eq!(
            verify_presentation(&[w.vk], &p, &["name", "dob"]),
            Err(Reject::InsufficientDisclosure)
        );

        // Proof from another tree.
        let other = build_pii_tree(&[("name", "Ada"), ("dob", "1990-01-01")]).unwrap();
        let Presentation::StatusWithDisclosure { status, .. } = p else { unreachable!() };
        let spliced = Presentation::StatusWithDisclosure {
            status,
            proof: prove_disclosure(&other, &["name"]).unwrap(),
        };
        assert_eq!(verify_presentation(&[w.vk], &spliced, &["name"]), Err(Reject::BindingMismatch));

        let pp = paper(&mut w, 1, "Bob");
        let p = pp
            .present(PresentationKind::StatusWithPasskey, &Consent::Granted(vec![]))
            .unwrap();
        let v = verify_presentation(&[w.vk], &p, &["dob"]).unwrap();
        assert_eq!(v.disclosed.get("name").map(String::as_str), Some("Bob"));
        assert_eq!(
            verify_presentation_bytes(&[w.vk], b"nope", &["dob"]),
            Err(Reject::Malformed)
        );
    }

    #[test]
    fn badge_only_cannot_satisfy_label_requests() {
        let mut w = world(1);
        let s = paper(&mut w, 0, "Ada");
        let p = s.present(PresentationKind::BadgeOnly, &Consent::Denied).unwrap();
        let none: [&str; 0] = [];
        assert!(verify_presentation(&[w.vk], &p, &none).is_ok());
        assert_eq!(verify_presentation(&[w.vk], &p, &["name"]), Err(Reject::InsufficientDisclosure));
    }

    /// Independent oracle: two transcripts share an identifier iff their raw
    /// bytes share a high-entropy 32-byte window. Shared encoding structure
    /// (field names, dates, lengths) repeats bytes heavily and is filtered
    /// out by the distinct-byte threshold.
    fn byte_intersection(a: &[u8], b: &[u8]) -> bool {
        let dense = |w: &&[u8]| w.iter().collect::<std::collections::HashSet<_>>().len() >= 24;
        let set: std::collections::HashSet<&[u8]> = a.windows(32).filter(dense).collect();
        b.windows(32).filter(dense).any(|w| set.contains(w))
    }

    #[test]
    fn linkage_trade_offs() {
        let mut w = world(3);
        let alice = paper(&mut w, 0, "Alice");
        let bob = paper(&mut w, 1, "Bob");
        let carol = app(&mut w, 2, "Carol");
        let with_pk = |s: &WalletState| {
            s.present(PresentationKind::StatusWithPasskey, &Consent::Granted(vec![]))
                .unwrap()
        };
        let status_only = |s: &WalletState| s.present(PresentationKind::StatusOnly, &Consent::Denied).unwrap();
        let t = vec![
            VenueTranscript::new("cafe", &with_pk(&alice)),
            VenueTranscript::new("gym", &with_pk(&alice)),
            VenueTranscript::new("cafe", &with_pk(&bob)),
            VenueTranscript::new("cinema", &status_only(&carol)),
            VenueTranscript::new("museum", &status_only(&carol)),
        ];
        let report = linkage_audit(&t).unwrap();
        assert!(report.via(0, 1).unwrap().contains(&LinkKey::PiiCommitment));
        assert!(!report.linkable(0, 2));
        assert!(report.via(3, 4).unwrap().contains(&LinkKey::PiiRoot));
        assert!(!report.linkable(2, 3));
        for a in 0..t.len() {
            for b in a + 1..t.len() {
                assert_eq!(
                    report.linkable(a, b),
                    byte_intersection(&t[a].received, &t[b].received),
                    "pair {a},{b}"
                );
            }
        }
        assert_eq!(linkage_audit(&t[..1]), Err(TooFewTranscripts));
    }

    #[test]
    fn status_only_transcript_holds_no_pii() {
        let mut w = world(2);
        for s in [paper(&mut w, 0, "Zelda Fitzgerald"), app(&mut w, 1, "Zelda Fitzgerald")] {
            let bytes = s.present(PresentationKind::StatusOnly, &Consent::Denied).unwrap().canonical_bytes();
            assert!(!bytes.windows(16).any(|x| x == b"Zelda Fitzgerald"));
            assert!(!bytes.windows(10).any(|x| x == b"1990-01-01"));
        }
    }

    #[test]
    fn spliced_badge_is_invalid() {
        let mut w = world(2);
        let a = paper(&mut w, 0, "Ada");
        let b = paper(&mut w, 1, "Bob");
        let spliced = Badge {
            info: BadgeInfo {
                pii_binding: b.badge().unwrap().info.pii_binding,
                ..a.badge().unwrap().info.clone()
            },
            signature: a.badge().unwrap().signature,
        };
        assert_eq!(verify_badge(&[w.vk], &spliced), Err(Invalid));
    }
}

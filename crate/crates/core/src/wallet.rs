//! User-side credential storage and presentation.
//!
//! The two variants are separate types, so a paper-card wallet cannot hold a
//! key or tree and an app wallet cannot hold a passkey. App wallets keep their
//! key behind a [`SigningKeyHandle`]; the only operations exposed on it are
//! signing and decryption.

use chrono::NaiveDate;
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::canonical::{Canonical, DecodeError, MapBuilder, MapReader, Value};
use crate::coupon::Coupon;
use crate::crypto::{
    self, build_pii_tree_with, prove_disclosure, CryptoError, DisclosureProof, HashDigest, PiiTree,
    PkCiphertext, Signature, SigningKeyHandle, TreeError, VerifyingKey, PBKDF2_ROUNDS,
};
use crate::vaccination::{Badge, Issued, Passkey, Status, StatusBinding};
use crate::verification::TrustAnchors;
use crate::wire::qr::{QrPayload, PRESENTATION_PREFIX};

pub const WALLET_FORMAT_VERSION: u8 = 1;
pub const DEFAULT_SECOND_DOSE_INTERVAL_DAYS: i64 = 21;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WalletError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("wallet holds no {0}")]
    MissingCredential(&'static str),
    #[error("consent not granted")]
    ConsentDenied,
    #[error("operation not available for this wallet variant")]
    VariantMismatch,
    #[error("credential is bound to a different holder")]
    BindingMismatch,
    #[error("credential is for a different coupon")]
    CouponMismatch,
    #[error("no first-dose record")]
    NoDose1,
    #[error("course already complete")]
    NotApplicable,
    #[error("unsupported wallet format version {0}")]
    BadVersion(u8),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("corrupt wallet: {0}")]
    Decode(#[from] DecodeError),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Variant {
    PaperCard,
    App,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PaperCard {
    coupon: Option<Coupon>,
    badge: Option<Badge>,
    status: Option<Status>,
    passkey: Option<Passkey>,
}

#[derive(Clone, Debug)]
pub struct AppWallet {
    coupon: Coupon,
    key: SigningKeyHandle,
    public_key: VerifyingKey,
    tree: PiiTree,
    badge: Option<Badge>,
    status: Option<Status>,
}

#[derive(Clone, Debug)]
pub enum WalletState {
    PaperCard(PaperCard),
    App(AppWallet),
}

/// Consent the holder gives for one presentation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Consent {
    Denied,
    Granted(Vec<String>),
}

impl Consent {
    pub fn labels<S: AsRef<str>>(labels: &[S]) -> Self {
        Consent::Granted(labels.iter().map(|s| s.as_ref().to_owned()).collect())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PresentationKind {
    BadgeOnly,
    StatusOnly,
    StatusWithPasskey,
    StatusWithDisclosure,
}

impl PresentationKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "badge" => Some(PresentationKind::BadgeOnly),
            "status" => Some(PresentationKind::StatusOnly),
            "passkey" => Some(PresentationKind::StatusWithPasskey),
            "disclosure" => Some(PresentationKind::StatusWithDisclosure),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PresentationKind::BadgeOnly => "badge",
            PresentationKind::StatusOnly => "status",
            PresentationKind::StatusWithPasskey => "passkey",
            PresentationKind::StatusWithDisclosure => "disclosure",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Presentation {
    BadgeOnly(Badge),
    StatusOnly(Status),
    StatusWithPasskey { status: Status, passkey: Passkey },
    StatusWithDisclosure { status: Status, proof: DisclosureProof },
}

impl Presentation {
    pub fn kind(&self) -> PresentationKind {
        match self {
            Presentation::BadgeOnly(_) => PresentationKind::BadgeOnly,
            Presentation::StatusOnly(_) => PresentationKind::StatusOnly,
            Presentation::StatusWithPasskey { .. } => PresentationKind::StatusWithPasskey,
            Presentation::StatusWithDisclosure { .. } => PresentationKind::StatusWithDisclosure,
        }
    }

    pub fn status(&self) -> Option<&Status> {
        match self {
            Presentation::BadgeOnly(_) => None,
            Presentation::StatusOnly(s)
            | Presentation::StatusWithPasskey { status: s, .. }
            | Presentation::StatusWithDisclosure { status: s, .. } => Some(s),
        }
    }
}

impl Canonical for Presentation {
    fn to_value(&self) -> Value {
        let b = MapBuilder::new().field("kind", self.kind().as_str());
        match self {
            Presentation::BadgeOnly(badge) => b.field("badge", badge.to_value()),
            Presentation::StatusOnly(s) => b.field("status", s.to_value()),
            Presentation::StatusWithPasskey { status, passkey } => b
                .field("passkey", passkey.to_value())
                .field("status", status.to_value()),
            Presentation::StatusWithDisclosure { status, proof } => b
                .field("proof", proof.to_value())
                .field("status", status.to_value()),
        }
        .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let kind = m.text("kind")?;
        let p = match PresentationKind::parse(&kind) {
            Some(PresentationKind::BadgeOnly) => Presentation::BadgeOnly(m.get("badge")?),
            Some(PresentationKind::StatusOnly) => Presentation::StatusOnly(m.get("status")?),
            Some(PresentationKind::StatusWithPasskey) => Presentation::StatusWithPasskey {
                status: m.get("status")?,
                passkey: m.get("passkey")?,
            },
            Some(PresentationKind::StatusWithDisclosure) => Presentation::StatusWithDisclosure {
                status: m.get("status")?,
                proof: m.get("proof")?,
            },
            None => {
                return Err(DecodeError::Invalid {
                    field: "kind",
                    reason: format!("unknown presentation kind `{kind}`"),
                })
            }
        };
        m.finish()?;
        Ok(p)
    }
}

impl QrPayload for Presentation {
    const PREFIX: &'static str = PRESENTATION_PREFIX;

    fn verify_embedded(&self, anchors: &TrustAnchors) -> bool {
        match self {
            Presentation::BadgeOnly(b) => b.verify_embedded(anchors),
            Presentation::StatusOnly(s)
            | Presentation::StatusWithPasskey { status: s, .. }
            | Presentation::StatusWithDisclosure { status: s, .. } => s.verify_embedded(anchors),
        }
    }
}

/// Creates an app wallet: a fresh key handle and a salted PII tree.
pub fn wallet_init_app<L, V>(coupon: Coupon, pii_entries: &[(L, V)]) -> Result<WalletState, WalletError>
where
    L: AsRef<str>,
    V: AsRef<str>,
{
    wallet_init_app_with(coupon, pii_entries, &mut OsRng)
}

pub fn wallet_init_app_with<L, V, R>(
    coupon: Coupon,
    pii_entries: &[(L, V)],
    rng: &mut R,
) -> Result<WalletState, WalletError>
where
    L: AsRef<str>,
    V: AsRef<str>,
    R: RngCore + CryptoRng,
{
    let tree = build_pii_tree_with(pii_entries, rng)?;
    let (key, public_key) = crypto::generate_keypair_with(rng)?;
    Ok(WalletState::App(AppWallet {
        coupon,
        key,
        public_key,
        tree,
        badge: None,
        status: None,
    }))
}

impl WalletState {
    pub fn new_paper(coupon: Option<Coupon>) -> Self {
        WalletState::PaperCard(PaperCard {
            coupon,
            ..PaperCard::default()
        })
    }

    pub fn variant(&self) -> Variant {
        match self {
            WalletState::PaperCard(_) => Variant::PaperCard,
            WalletState::App(_) => Variant::App,
        }
    }

    pub fn coupon(&self) -> Option<&Coupon> {
        match self {
            WalletState::PaperCard(p) => p.coupon.as_ref(),
            WalletState::App(a) => Some(&a.coupon),
        }
    }

    pub fn badge(&self) -> Option<&Badge> {
        match self {
            WalletState::PaperCard(p) => p.badge.as_ref(),
            WalletState::App(a) => a.badge.as_ref(),
        }
    }

    pub fn status(&self) -> Option<&Status> {
        match self {
            WalletState::PaperCard(p) => p.status.as_ref(),
            WalletState::App(a) => a.status.as_ref(),
        }
    }

    pub fn passkey(&self) -> Option<&Passkey> {
        match self {
            WalletState::PaperCard(p) => p.passkey.as_ref(),
            WalletState::App(_) => None,
        }
    }

    pub fn public_key(&self) -> Option<VerifyingKey> {
        match self {
            WalletState::App(a) => Some(a.public_key),
            WalletState::PaperCard(_) => None,
        }
    }

    pub fn pii_tree(&self) -> Option<&PiiTree> {
        match self {
            WalletState::App(a) => Some(&a.tree),
            WalletState::PaperCard(_) => None,
        }
    }

    pub fn pii_root(&self) -> Option<HashDigest> {
        self.pii_tree().map(PiiTree::root)
    }

    pub fn dose_dates(&self) -> Vec<NaiveDate> {
        self.badge()
            .map(|b| b.info.dose_history.iter().map(|d| d.date).collect())
            .unwrap_or_default()
    }

    pub fn set_coupon(&mut self, coupon: Coupon) -> Result<(), WalletError> {
        match self {
            WalletState::PaperCard(p) if p.badge.is_none() => {
                p.coupon = Some(coupon);
                Ok(())
            }
            WalletState::PaperCard(_) => Err(WalletError::CouponMismatch),
            WalletState::App(_) => Err(WalletError::VariantMismatch),
        }
    }

    /// Stores the result of an issuance (first or second dose).
    pub fn store(&mut self, issued: Issued) -> Result<(), WalletError> {
        if let Some(c) = self.coupon() {
            if *c != issued.badge.info.coupon {
                return Err(WalletError::CouponMismatch);
            }
        }
        match self {
            WalletState::PaperCard(p) => {
                if !matches!(issued.status.payload.binding, StatusBinding::PasskeyHash(_)) {
                    return Err(WalletError::VariantMismatch);
                }
                let passkey = match issued.passkey {
                    Some(pk) => pk,
                    None => p.passkey.clone().ok_or(WalletError::MissingCredential("passkey"))?,
                };
                if issued.status.payload.binding != StatusBinding::PasskeyHash(passkey.hash())
                    || issued.badge.info.pii_binding
                        != crate::vaccination::PiiBinding::Commitment(passkey.commitment())
                {
                    return Err(WalletError::BindingMismatch);
                }
                p.coupon = Some(issued.badge.info.coupon.clone());
                p.badge = Some(issued.badge);
                p.status = Some(issued.status);
                p.passkey = Some(passkey);
                Ok(())
            }
            WalletState::App(a) => {
                if issued.passkey.is_some() {
                    return Err(WalletError::VariantMismatch);
                }
                let expected = StatusBinding::App {
                    user_pk: a.public_key,
                    pii_root: a.tree.root(),
                };
                if issued.status.payload.binding != expected
                    || issued.badge.info.pii_binding
                        != crate::vaccination::PiiBinding::TreeRoot(a.tree.root())
                {
                    return Err(WalletError::BindingMismatch);
                }
                a.badge = Some(issued.badge);
                a.status = Some(issued.status);
                Ok(())
            }
        }
    }

    /// Builds a presentation containing exactly what the consent allows.
    pub fn present(&self, kind: PresentationKind, consent: &Consent) -> Result<Presentation, WalletError> {
        let status = || self.status().cloned().ok_or(WalletError::MissingCredential("status"));
        match kind {
            PresentationKind::BadgeOnly => Ok(Presentation::BadgeOnly(
                self.badge().cloned().ok_or(WalletError::MissingCredential("badge"))?,
            )),
            PresentationKind::StatusOnly => Ok(Presentation::StatusOnly(status()?)),
            PresentationKind::StatusWithPasskey => {
                let WalletState::PaperCard(p) = self else {
                    return Err(WalletError::VariantMismatch);
                };
                let status = status()?;
                let passkey = p.passkey.clone().ok_or(WalletError::MissingCredential("passkey"))?;
                match consent {
                    Consent::Granted(_) => Ok(Presentation::StatusWithPasskey { status, passkey }),
                    Consent::Denied => Err(WalletError::ConsentDenied),
                }
            }
            PresentationKind::StatusWithDisclosure => {
                let WalletState::App(a) = self else {
                    return Err(WalletError::VariantMismatch);
                };
                let status = status()?;
                let Consent::Granted(labels) = consent else {
                    return Err(WalletError::ConsentDenied);
                };
                let proof = prove_disclosure(&a.tree, labels)?;
                Ok(Presentation::StatusWithDisclosure { status, proof })
            }
        }
    }

    /// Whether the second dose is due, and days elapsed since the first.
    pub fn second_dose_due(&self, today: NaiveDate, interval_days: i64) -> Result<(bool, i64), WalletError> {
        let badge = self.badge().ok_or(WalletError::NoDose1)?;
        match badge.info.dose_history.as_slice() {
            [d1] => {
                let days = (today - d1.date).num_days();
                Ok((days >= interval_days, days))
            }
            _ => Err(WalletError::NotApplicable),
        }
    }

    /// Signs with the wallet key (app variant only).
    pub fn sign(&self, msg: &[u8]) -> Result<Signature, WalletError> {
        match self {
            WalletState::App(a) => Ok(crypto::sign(&a.key, msg)),
            WalletState::PaperCard(_) => Err(WalletError::VariantMismatch),
        }
    }

    /// Decrypts a ciphertext addressed to the wallet key (app variant only).
    pub fn decrypt(&self, ct: &PkCiphertext) -> Result<Vec<u8>, WalletError> {
        match self {
            WalletState::App(a) => Ok(crypto::decrypt(&a.key, ct)?),
            WalletState::PaperCard(_) => Err(WalletError::VariantMismatch),
        }
    }

    /// Structural invariants; always `Ok` for states built through this API.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.badge().is_some() && self.coupon().is_none() {
            return Err("badge without coupon".into());
        }
        if let (Some(b), Some(c)) = (self.badge(), self.coupon()) {
            if b.info.coupon != *c {
                return Err("badge for a different coupon".into());
            }
        }
        match self {
            WalletState::PaperCard(p) => {
                if p.status.as_ref().is_some_and(|s| s.user_pk().is_some()) {
                    return Err("paper card holds an app status".into());
                }
            }
            WalletState::App(a) => {
                if a.key.verifying_key() != a.public_key {
                    return Err("key handle does not match public key".into());
                }
                if a.status.as_ref().is_some_and(|s| s.user_pk() != Some(&a.public_key)) {
                    return Err("status bound to another key".into());
                }
            }
        }
        Ok(())
    }

    /// Encrypted wallet file: one version byte, then a passphrase-sealed
    /// canonical map. The key handle is nested as its own sealed export.
    pub fn seal<R: RngCore + CryptoRng>(&self, passphrase: &str, rng: &mut R) -> Vec<u8> {
        self.seal_with_rounds(passphrase, PBKDF2_ROUNDS, rng)
    }

    pub fn seal_with_rounds<R: RngCore + CryptoRng>(&self, passphrase: &str, rounds: u32, rng: &mut R) -> Vec<u8> {
        let body = match self {
            WalletState::PaperCard(p) => MapBuilder::new()
                .opt_field("badge", p.badge.as_ref().map(Canonical::to_value))
                .opt_field("coupon", p.coupon.as_ref().map(Canonical::to_value))
                .opt_field("passkey", p.passkey.as_ref().map(Canonical::to_value))
                .opt_field("status", p.status.as_ref().map(Canonical::to_value))
                .field("variant", "paper"),
            WalletState::App(a) => MapBuilder::new()
                .opt_field("badge", a.badge.as_ref().map(Canonical::to_value))
                .field("coupon", a.coupon.to_value())
                .field("key", a.key.export_sealed_with_rounds(passphrase, rounds, rng))
                .opt_field("status", a.status.as_ref().map(Canonical::to_value))
                .field("tree", a.tree.to_value())
                .field("variant", "app"),
        }
        .build()
        .to_bytes();
        let mut out = vec![WALLET_FORMAT_VERSION];
        out.extend(crypto::seal_with_passphrase(passphrase, &body, rounds, rng));
        out
    }

    pub fn unseal(bytes: &[u8], passphrase: &str) -> Result<Self, WalletError> {
        let (&version, sealed) = bytes.split_first().ok_or(WalletError::BadVersion(0))?;
        if version != WALLET_FORMAT_VERSION {
            return Err(WalletError::BadVersion(version));
        }
        let body = crypto::open_with_passphrase(passphrase, sealed)?;
        let mut m = MapReader::new(Value::from_bytes(&body)?)?;
        let variant = m.text("variant")?;
        let badge = m.get_opt("badge")?;
        let status = m.get_opt("status")?;
        let state = match variant.as_str() {
            "paper" => WalletState::PaperCard(PaperCard {
                coupon: m.get_opt("coupon")?,
                passkey: m.get_opt("passkey")?,
                badge,
                status,
            }),
            "app" => {
                let (key, public_key) = SigningKeyHandle::import_sealed(&m.bytes("key")?, passphrase)?;
                WalletState::App(AppWallet {
                    coupon: m.get("coupon")?,
                    tree: m.get("tree")?,
                    key,
                    public_key,
                    badge,
                    status,
                })
            }
            other => {
                return Err(WalletError::Decode(DecodeError::Invalid {
                    field: "variant",
                    reason: format!("unknown variant `{other}`"),
                }))
            }
        };
        m.finish()?;
        state
            .check_invariants()
            .map_err(|reason| WalletError::Decode(DecodeError::Invalid { field: "wallet", reason }))?;
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupon::issue_coupon_batch;
    use crate::crypto::generate_keypair;
    use crate::registry::Registry;
    use crate::vaccination::{BadgeIssuer, DoseInfo, LocalTransport, PharmacySession};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::Arc;

    const FAST_ROUNDS: u32 = 1_000;

    fn day(n: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, 1).unwrap() + chrono::Days::new(n)
    }

    fn entries() -> Vec<(&'static str, &'static str)> {
        vec![
            ("name", "Katherine Johnson"),
            ("dob", "1918-08-26"),
            ("zip", "23666"),
            ("id", "ID-4471-ZX"),
        ]
    }

    struct World {
        coupons: Vec<Coupon>,
        session: PharmacySession<LocalTransport>,
    }

    fn world(n: u64) -> World {
        let (key, vk) = generate_keypair().unwrap();
        let registry = Arc::new(Registry::new());
        let coupons = issue_coupon_batch(&key, &registry, n, "02139", "healthcare").unwrap();
        let issuer = Arc::new(BadgeIssuer::new(key, vec![vk], Arc::clone(&registry)));
        let session = PharmacySession::new("S-1", day(60), vec![vk], vk, LocalTransport::new(issuer));
        World { coupons, session }
    }

    fn dose(n: u8, d: u64) -> DoseInfo {
        DoseInfo::new("VAX-A", "L-123", day(d), n, "S-1")
    }

    fn contains(hay: &[u8], needle: &[u8]) -> bool {
        hay.windows(needle.len()).any(|w| w == needle)
    }

    fn paper_wallet(w: &mut World, idx: usize) -> WalletState {
        let pii = entries().iter().map(|(l, v)| (l.to_string(), v.to_string())).collect();
        let issued = w
            .session
            .issue_credentials_paper(&w.coupons[idx], dose(1, 0), pii, &mut OsRng)
            .unwrap();
        let mut state = WalletState::new_paper(Some(w.coupons[idx].clone()));
        state.store(issued).unwrap();
        state
    }

    fn app_wallet(w: &mut World, idx: usize) -> WalletState {
        let mut state = wallet_init_app(w.coupons[idx].clone(), &entries()).unwrap();
        let issued = w
            .session
            .issue_credentials_app(&w.coupons[idx], dose(1, 0), state.pii_root().unwrap(), state.public_key().unwrap())
            .unwrap();
        state.store(issued).unwrap();
        state
    }

    #[test]
    fn init_app_builds_tree_without_passkey() {
        let w = world(1);
        let s = wallet_init_app(w.coupons[0].clone(), &entries()).unwrap();
        assert_eq!(s.variant(), Variant::App);
        assert!(s.passkey().is_none());
        assert_eq!(s.pii_tree().unwrap().len(), 4);
        let empty: [(&str, &str); 0] = [];
        assert_eq!(
            wallet_init_app(w.coupons[0].clone(), &empty).unwrap_err(),
            WalletError::Tree(TreeError::Empty)
        );
        assert_eq!(
            wallet_init_app(w.coupons[0].clone(), &[("a", "1"), ("a", "2")]).unwrap_err(),
            WalletError::Tree(TreeError::DuplicateLabel("a".into()))
        );
    }

    #[test]
    fn persist_and_reload_app_wallet() {
        let mut w = world(1);
        let s = app_wallet(&mut w, 0);
        let blob = s.seal_with_rounds("correct horse", FAST_ROUNDS, &mut OsRng);
        assert_eq!(blob[0], WALLET_FORMAT_VERSION);
        let back = WalletState::unseal(&blob, "correct horse").unwrap();
        assert_eq!(back.pii_root(), s.pii_root());
        assert_eq!(back.public_key(), s.public_key());
        assert_eq!(back.status(), s.status());
        let sig = back.sign(b"hello").unwrap();
        assert!(crypto::verify(&s.public_key().unwrap(), b"hello", &sig));
        assert!(WalletState::unseal(&blob, "wrong").is_err());
        let mut bad = blob.clone();
        bad[0] = 9;
        assert_eq!(WalletState::unseal(&bad, "correct horse").unwrap_err(), WalletError::BadVersion(9));
        // Nothing readable survives in the file.
        for (_, v) in entries() {
            assert!(!contains(&blob, v.as_bytes()));
        }
    }

    #[test]
    fn persist_and_reload_paper_wallet() {
        let mut w = world(1);
        let s = paper_wallet(&mut w, 0);
        let blob = s.seal_with_rounds("pw", FAST_ROUNDS, &mut OsRng);
        let back = WalletState::unseal(&blob, "pw").unwrap();
        assert_eq!(back.passkey(), s.passkey());
        assert_eq!(back.badge(), s.badge());
    }

    #[test]
    fn presentation_contents() {
        let mut w = world(2);
        let paper = paper_wallet(&mut w, 0);
        let app = app_wallet(&mut w, 1);

        let p = paper.present(PresentationKind::StatusOnly, &Consent::Denied).unwrap();
        assert_eq!(p, Presentation::StatusOnly(paper.status().unwrap().clone()));
        assert_eq!(
            paper.present(PresentationKind::StatusWithPasskey, &Consent::Denied),
            Err(WalletError::ConsentDenied)
        );
        assert_eq!(
            paper.present(PresentationKind::StatusWithDisclosure, &Consent::labels(&["name"])),
            Err(WalletError::VariantMismatch)
        );
        assert_eq!(
            app.present(PresentationKind::StatusWithPasskey, &Consent::labels(&["name"])),
            Err(WalletError::VariantMismatch)
        );

        let p = app
            .present(PresentationKind::StatusWithDisclosure, &Consent::labels(&["name"]))
            .unwrap();
        let bytes = p.canonical_bytes();
        assert!(contains(&bytes, b"Katherine Johnson"));
        assert!(!contains(&bytes, b"1918-08-26"));
        assert_eq!(Presentation::from_canonical_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn consent_minimality_over_all_subsets() {
        let mut w = world(1);
        let app = app_wallet(&mut w, 0);
        let tree = app.pii_tree().unwrap();
        let labels: Vec<&str> = tree.labels().collect();
        for mask in 1u32..(1 << labels.len()) {
            let chosen: Vec<&str> = (0..labels.len()).filter(|i| mask & (1 << i) != 0).map(|i| labels[i]).collect();
            let p = app
                .present(PresentationKind::StatusWithDisclosure, &Consent::labels(&chosen))
                .unwrap();
            let bytes = p.canonical_bytes();
            for leaf in tree.leaves() {
                let shown = chosen.contains(&leaf.label.as_str());
                assert_eq!(contains(&bytes, leaf.value.as_bytes()), shown, "{}", leaf.label);
                assert_eq!(contains(&bytes, leaf.salt.as_bytes()), shown, "{}", leaf.label);
            }
        }
    }

    #[test]
    fn missing_credentials() {
        let s = WalletState::new_paper(None);
        assert_eq!(
            s.present(PresentationKind::StatusOnly, &Consent::Denied),
            Err(WalletError::MissingCredential("status"))
        );
        assert_eq!(s.second_dose_due(day(0), 21), Err(WalletError::NoDose1));
        assert_eq!(s.sign(b"x"), Err(WalletError::VariantMismatch));
    }

    #[test]
    fn second_dose_reminder() {
        let mut w = world(1);
        let s = app_wallet(&mut w, 0);
        assert_eq!(s.second_dose_due(day(22), DEFAULT_SECOND_DOSE_INTERVAL_DAYS), Ok((true, 22)));
        assert_eq!(s.second_dose_due(day(20), DEFAULT_SECOND_DOSE_INTERVAL_DAYS), Ok((false, 20)));
        assert_eq!(s.second_dose_due(day(21), DEFAULT_SECOND_DOSE_INTERVAL_DAYS), Ok((true, 21)));

        let mut s = s;
        let issued = w
            .session
            .second_dose(s.badge().unwrap(), s.status().unwrap(), dose(2, 21))
            .unwrap();
        s.store(issued).unwrap();
        assert_eq!(s.dose_dates(), vec![day(0), day(21)]);
        assert_eq!(s.second_dose_due(day(40), 21), Err(WalletError::NotApplicable));
    }

    #[test]
    fn paper_second_dose_keeps_passkey() {
        let mut w = world(1);
        let mut s = paper_wallet(&mut w, 0);
        let pk = s.passkey().cloned();
        let issued = w
            .session
            .second_dose(s.badge().unwrap(), s.status().unwrap(), dose(2, 21))
            .unwrap();
        s.store(issued).unwrap();
        assert_eq!(s.passkey().cloned(), pk);
        assert_eq!(s.badge().unwrap().info.dose_history.len(), 2);
    }

    #[test]
    fn store_rejects_foreign_credentials() {
        let mut w = world(2);
        let paper = paper_wallet(&mut w, 0);
        let mut app = wallet_init_app(w.coupons[1].clone(), &entries()).unwrap();
        let issued = Issued {
            badge: paper.badge().unwrap().clone(),
            status: paper.status().unwrap().clone(),
            passkey: paper.passkey().cloned(),
        };
        assert_eq!(app.store(issued.clone()), Err(WalletError::CouponMismatch));
        let mut other_paper = WalletState::new_paper(None);
        let mut wrong_pk = issued;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        wrong_pk.passkey = Some(Passkey::new(vec![("name".into(), "Mallory".into())], &mut rng));
        assert_eq!(other_paper.store(wrong_pk), Err(WalletError::BindingMismatch));
    }

    /// Attempts to reproduce a wallet signature using every 32-byte window of
    /// every exported byte string as an Ed25519 seed.
    #[test]
    fn exported_bytes_never_reproduce_wallet_signatures() {
        let mut w = world(1);
        let s = app_wallet(&mut w, 0);
        let msg = b"opacity probe";
        let target = s.sign(msg).unwrap();
        let mut exports: Vec<Vec<u8>> = vec![
            s.public_key().unwrap().as_bytes().to_vec(),
            s.seal_with_rounds("pw", FAST_ROUNDS, &mut OsRng),
            s.status().unwrap().canonical_bytes(),
            s.badge().unwrap().canonical_bytes(),
            s.pii_tree().unwrap().canonical_bytes(),
            format!("{s:?}").into_bytes(),
        ];
        for kind in [PresentationKind::BadgeOnly, PresentationKind::StatusOnly] {
            exports.push(s.present(kind, &Consent::Denied).unwrap().canonical_bytes());
        }
        let mut tried = 0;
        for bytes in &exports {
            for win in bytes.windows(32) {
                let seed: [u8; 32] = win.try_into().unwrap();
                let sk = ed25519_dalek::SigningKey::from_bytes(&seed);
                use ed25519_dalek::Signer;
                assert_ne!(sk.sign(msg).to_bytes(), target.0);
                tried += 1;
            }
        }
        assert!(tried > 1000);
    }

    #[derive(Clone, Debug)]
    enum Op {
        StorePaper,
        StoreApp,
        SecondDose,
        Present(u8),
        SetCoupon,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            Just(Op::StorePaper),
            Just(Op::StoreApp),
            Just(Op::SecondDose),
            (0u8..4).prop_map(Op::Present),
            Just(Op::SetCoupon),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn variant_invariants_hold_under_any_sequence(ops in proptest::collection::vec(op(), 1..8), start_app in any::<bool>()) {
            let mut w = world(3);
            let paper_src = paper_wallet(&mut w, 0);
            let app_src = app_wallet(&mut w, 1);
            let paper_issued = Issued {
                badge: paper_src.badge().unwrap().clone(),
                status: paper_src.status().unwrap().clone(),
                passkey: paper_src.passkey().cloned(),
            };
            let app_issued = Issued {
                badge: app_src.badge().unwrap().clone(),
                status: app_src.status().unwrap().clone(),
                passkey: None,
            };
            let mut state = if start_app {
                wallet_init_app(w.coupons[2].clone(), &entries()).unwrap()
            } else {
                WalletState::new_paper(None)
            };
            for op in ops {
                match op {
                    Op::StorePaper => { let _ = state.store(paper_issued.clone()); }
                    Op::StoreApp => { let _ = state.store(app_issued.clone()); }
                    Op::SecondDose => {
                        if let (Some(b), Some(s)) = (state.badge().cloned(), state.status().cloned()) {
                            if let Ok(issued) = w.session.second_dose(&b, &s, dose(2, 21)) {
                                let _ = state.store(issued);
                            }
                        }
                    }
                    Op::Present(k) => {
                        let kind = [PresentationKind::BadgeOnly, PresentationKind::StatusOnly,
                            PresentationKind::StatusWithPasskey, PresentationKind::StatusWithDisclosure][k as usize];
                        if let Ok(p) = state.present(kind, &Consent::labels(&["name"])) {
                            let crossed = matches!(
                                (&state, p.kind()),
                                (WalletState::App(_), PresentationKind::StatusWithPasskey)
                                    | (WalletState::PaperCard(_), PresentationKind::StatusWithDisclosure)
                            );
                            prop_assert!(!crossed);
                        }
                    }
                    Op::SetCoupon => { let _ = state.set_coupon(w.coupons[0].clone()); }
                }
                prop_assert_eq!(state.check_invariants(), Ok(()));
                prop_assert_eq!(state.variant() == Variant::App, start_app);
                if start_app { prop_assert!(state.passkey().is_none()); }
                else { prop_assert!(state.public_key().is_none() && state.pii_tree().is_none()); }
            }
        }
    }
}

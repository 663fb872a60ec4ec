//! Signature, hashing, commitment and public-key encryption primitives.
//!
//! A key pair here is two keys under one handle: an Ed25519 signing key and an
//! X25519 key used to receive encrypted messages. The public half of both is
//! serialized as one [`VerifyingKey`] prefixed by a scheme identifier, so a
//! verifier holding a key of a different scheme rejects instead of guessing.
//!
//! Secret material never leaves a [`SigningKeyHandle`] in the clear. The only
//! export is [`SigningKeyHandle::export_sealed`], which encrypts it under a
//! passphrase-derived key.

pub mod merkle;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::Signer;
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::Zeroizing;

use crate::canonical::{Canonical, DecodeError, MapBuilder, MapReader, Value};

pub use merkle::{
    build_pii_tree, build_pii_tree_with, prove_disclosure, verify_disclosure, DisclosedLeaf,
    DisclosureProof, PathStep, PiiLeaf, PiiTree, Side, TreeError,
};

/// Domain-separation tags, one per hashing context.
pub mod tag {
    pub const LEAF: u8 = 0x00;
    pub const NODE: u8 = 0x01;
    pub const PII_COMMITMENT: u8 = 0x02;
    pub const PASSKEY: u8 = 0x03;
}

/// Identifier of the Ed25519 + X25519 key scheme.
pub const SCHEME_ED25519_X25519: u8 = 0x01;
pub const VERIFYING_KEY_LEN: usize = 65;
pub const SIGNATURE_LEN: usize = 64;
pub const SALT_LEN: usize = 16;
pub const PBKDF2_ROUNDS: u32 = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("randomness source failed")]
    Randomness,
    #[error("malformed public key")]
    MalformedKey,
    #[error("unsupported key scheme 0x{0:02x}")]
    UnsupportedScheme(u8),
    #[error("decryption failed")]
    AuthFailure,
    #[error("malformed sealed blob: {0}")]
    Sealed(#[from] DecodeError),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HashDigest(pub [u8; 32]);

impl HashDigest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let raw = hex::decode(s).ok()?;
        Some(HashDigest(raw.try_into().ok()?))
    }
}

impl fmt::Debug for HashDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashDigest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for HashDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl From<HashDigest> for Value {
    fn from(d: HashDigest) -> Self {
        Value::Bytes(d.0.to_vec())
    }
}

impl Canonical for HashDigest {
    fn to_value(&self) -> Value {
        (*self).into()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        match v {
            Value::Bytes(b) => Ok(HashDigest(
                b.try_into().map_err(|_| DecodeError::FieldType("digest"))?,
            )),
            _ => Err(DecodeError::FieldType("digest")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Salt(pub [u8; SALT_LEN]);

impl Salt {
    pub fn random() -> Self {
        Self::random_with(&mut OsRng)
    }

    pub fn random_with<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut b = [0u8; SALT_LEN];
        rng.fill_bytes(&mut b);
        Salt(b)
    }

    pub fn as_bytes(&self) -> &[u8; SALT_LEN] {
        &self.0
    }
}

impl fmt::Debug for Salt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Salt(..)")
    }
}

impl From<Salt> for Value {
    fn from(s: Salt) -> Self {
        Value::Bytes(s.0.to_vec())
    }
}

/// Plain SHA-256, used for identifiers derived from canonical bytes.
pub fn sha256(bytes: &[u8]) -> HashDigest {
    HashDigest(Sha256::digest(bytes).into())
}

pub(crate) fn tagged_hash(tag: u8, parts: &[&[u8]]) -> HashDigest {
    let mut h = Sha256::new();
    h.update([tag]);
    for p in parts {
        h.update(p);
    }
    HashDigest(h.finalize().into())
}

/// Salted PII commitment: `H(0x02 ‖ value ‖ salt)`.
pub fn salted_hash(value: &[u8], salt: &Salt) -> HashDigest {
    tagged_hash(tag::PII_COMMITMENT, &[value, salt.as_bytes()])
}

/// Passkey digest carried by paper-card status codes: `H(0x03 ‖ passkey)`.
pub fn passkey_hash(canonical_passkey: &[u8]) -> HashDigest {
    tagged_hash(tag::PASSKEY, &[canonical_passkey])
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct VerifyingKey([u8; VERIFYING_KEY_LEN]);

impl VerifyingKey {
    /// Parses serialized key bytes, rejecting unknown schemes and invalid
    /// curve points.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let raw: [u8; VERIFYING_KEY_LEN] =
            bytes.try_into().map_err(|_| CryptoError::MalformedKey)?;
        if raw[0] != SCHEME_ED25519_X25519 {
            return Err(CryptoError::UnsupportedScheme(raw[0]));
        }
        let vk = VerifyingKey(raw);
        vk.ed25519().ok_or(CryptoError::MalformedKey)?;
        Ok(vk)
    }

    pub fn as_bytes(&self) -> &[u8; VERIFYING_KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        Self::from_bytes(&hex::decode(s.trim()).map_err(|_| CryptoError::MalformedKey)?)
    }

    pub fn fingerprint(&self) -> HashDigest {
        sha256(&self.0)
    }

    fn ed25519(&self) -> Option<ed25519_dalek::VerifyingKey> {
        let raw: [u8; 32] = self.0[1..33].try_into().unwrap();
        ed25519_dalek::VerifyingKey::from_bytes(&raw).ok()
    }

    fn x25519(&self) -> x25519_dalek::PublicKey {
        let raw: [u8; 32] = self.0[33..65].try_into().unwrap();
        x25519_dalek::PublicKey::from(raw)
    }
}

impl fmt::Debug for VerifyingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerifyingKey({})", &self.to_hex()[2..18])
    }
}

impl Canonical for VerifyingKey {
    fn to_value(&self) -> Value {
        Value::Bytes(self.0.to_vec())
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        match v {
            Value::Bytes(b) => VerifyingKey::from_bytes(&b).map_err(|e| DecodeError::Invalid {
                field: "verifying key",
                reason: e.to_string(),
            }),
            _ => Err(DecodeError::FieldType("verifying key")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..8]))
    }
}

impl Canonical for Signature {
    fn to_value(&self) -> Value {
        Value::Bytes(self.0.to_vec())
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        match v {
            Value::Bytes(b) => Ok(Signature(
                b.try_into().map_err(|_| DecodeError::FieldType("signature"))?,
            )),
            _ => Err(DecodeError::FieldType("signature")),
        }
    }
}

struct KeyMaterial {
    signing: ed25519_dalek::SigningKey,
    dh: x25519_dalek::StaticSecret,
}

static NEXT_HANDLE: AtomicU64 = AtomicU64::new(1);

/// Opaque reference to a private key pair. Cloning shares the same key.
#[derive(Clone)]
pub struct SigningKeyHandle {
    id: u64,
    material: Arc<KeyMaterial>,
}

impl fmt::Debug for SigningKeyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKeyHandle")
            .field("id", &self.id)
            .finish_non_exhaustive()
    }
}

impl SigningKeyHandle {
    fn from_secrets(seed: [u8; 32], dh: [u8; 32]) -> (Self, VerifyingKey) {
        let material = KeyMaterial {
            signing: ed25519_dalek::SigningKey::from_bytes(&seed),
            dh: x25519_dalek::StaticSecret::from(dh),
        };
        let handle = SigningKeyHandle {
            id: NEXT_HANDLE.fetch_add(1, Ordering::Relaxed),
            material: Arc::new(material),
        };
        let vk = handle.verifying_key();
        (handle, vk)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        let mut raw = [0u8; VERIFYING_KEY_LEN];
        raw[0] = SCHEME_ED25519_X25519;
        raw[1..33].copy_from_slice(self.material.signing.verifying_key().as_bytes());
        raw[33..65].copy_from_slice(x25519_dalek::PublicKey::from(&self.material.dh).as_bytes());
        VerifyingKey(raw)
    }

    /// Encrypts the key pair under `passphrase`. The blob is the only form in
    /// which secret material leaves the handle.
    pub fn export_sealed<R: RngCore + CryptoRng>(&self, passphrase: &str, rng: &mut R) -> Vec<u8> {
        self.export_sealed_with_rounds(passphrase, PBKDF2_ROUNDS, rng)
    }

    pub fn export_sealed_with_rounds<R: RngCore + CryptoRng>(
        &self,
        passphrase: &str,
        rounds: u32,
        rng: &mut R,
    ) -> Vec<u8> {
        let mut secret = Zeroizing::new([0u8; 64]);
        secret[..32].copy_from_slice(self.material.signing.as_bytes());
        secret[32..].copy_from_slice(&self.material.dh.to_bytes());
        seal_with_passphrase(passphrase, &secret[..], rounds, rng)
    }

    pub fn import_sealed(
        blob: &[u8],
        passphrase: &str,
    ) -> Result<(SigningKeyHandle, VerifyingKey), CryptoError> {
        let secret = Zeroizing::new(open_with_passphrase(passphrase, blob)?);
        if secret.len() != 64 {
            return Err(CryptoError::AuthFailure);
        }
        let seed: [u8; 32] = secret[..32].try_into().unwrap();
        let dh: [u8; 32] = secret[32..].try_into().unwrap();
        Ok(Self::from_secrets(seed, dh))
    }
}

pub fn generate_keypair() -> Result<(SigningKeyHandle, VerifyingKey), CryptoError> {
    generate_keypair_with(&mut OsRng)
}

pub fn generate_keypair_with<R: RngCore + CryptoRng>(
    rng: &mut R,
) -> Result<(SigningKeyHandle, VerifyingKey), CryptoError> {
    let mut seed = Zeroizing::new([0u8; 32]);
    let mut dh = Zeroizing::new([0u8; 32]);
    rng.try_fill_bytes(&mut seed[..])
        .map_err(|_| CryptoError::Randomness)?;
    rng.try_fill_bytes(&mut dh[..])
        .map_err(|_| CryptoError::Randomness)?;
    Ok(SigningKeyHandle::from_secrets(*seed, *dh))
}

pub fn sign(handle: &SigningKeyHandle, msg: &[u8]) -> Signature {
    Signature(handle.material.signing.sign(msg).to_bytes())
}

pub fn verify(vk: &VerifyingKey, msg: &[u8], sig: &Signature) -> bool {
    verify_bytes(vk, msg, sig.as_bytes())
}

/// Total verification over raw signature bytes; malformed input is `false`.
pub fn verify_bytes(vk: &VerifyingKey, msg: &[u8], sig: &[u8]) -> bool {
    let Ok(raw) = <[u8; SIGNATURE_LEN]>::try_from(sig) else {
        return false;
    };
    let Some(key) = vk.ed25519() else {
        return false;
    };
    key.verify_strict(msg, &ed25519_dalek::Signature::from_bytes(&raw))
        .is_ok()
}

/// Ephemeral-static X25519 encryption with ChaCha20-Poly1305.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PkCiphertext {
    pub ephemeral_pub: [u8; 32],
    pub nonce: [u8; 12],
    pub body: Vec<u8>,
}

impl Canonical for PkCiphertext {
    fn to_value(&self) -> Value {
        MapBuilder::new()
            .field("body", self.body.clone())
            .field("eph", self.ephemeral_pub.to_vec())
            .field("nonce", self.nonce.to_vec())
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let ct = PkCiphertext {
            body: m.bytes("body")?,
            ephemeral_pub: m.fixed("eph")?,
            nonce: m.fixed("nonce")?,
        };
        m.finish()?;
        Ok(ct)
    }
}

fn ecies_key(shared: &[u8; 32], eph: &[u8; 32], recipient: &VerifyingKey) -> Zeroizing<[u8; 32]> {
    let mut h = Sha256::new();
    h.update(b"vaxcred/ecies/v1");
    h.update(shared);
    h.update(eph);
    h.update(recipient.as_bytes());
    Zeroizing::new(h.finalize().into())
}

pub fn encrypt_to(pk: &VerifyingKey, plaintext: &[u8]) -> Result<PkCiphertext, CryptoError> {
    encrypt_to_with(pk, plaintext, &mut OsRng)
}

pub fn encrypt_to_with<R: RngCore + CryptoRng>(
    pk: &VerifyingKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<PkCiphertext, CryptoError> {
    let mut eph_secret = Zeroizing::new([0u8; 32]);
    rng.try_fill_bytes(&mut eph_secret[..])
        .map_err(|_| CryptoError::Randomness)?;
    let eph = x25519_dalek::StaticSecret::from(*eph_secret);
    let ephemeral_pub = *x25519_dalek::PublicKey::from(&eph).as_bytes();
    let shared = eph.diffie_hellman(&pk.x25519());
    if !shared.was_contributory() {
        return Err(CryptoError::MalformedKey);
    }
    let key = ecies_key(shared.as_bytes(), &ephemeral_pub, pk);
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let body = ChaCha20Poly1305::new(Key::from_slice(&key[..]))
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: plaintext,
                aad: &ephemeral_pub,
            },
        )
        .map_err(|_| CryptoError::AuthFailure)?;
    Ok(PkCiphertext {
        ephemeral_pub,
        nonce,
        body,
    })
}

pub fn decrypt(handle: &SigningKeyHandle, ct: &PkCiphertext) -> Result<Vec<u8>, CryptoError> {
    let eph = x25519_dalek::PublicKey::from(ct.ephemeral_pub);
    let shared = handle.material.dh.diffie_hellman(&eph);
    if !shared.was_contributory() {
        return Err(CryptoError::AuthFailure);
    }
    let key = ecies_key(shared.as_bytes(), &ct.ephemeral_pub, &handle.verifying_key());
    ChaCha20Poly1305::new(Key::from_slice(&key[..]))
        .decrypt(
            Nonce::from_slice(&ct.nonce),
            Payload {
                msg: &ct.body,
                aad: &ct.ephemeral_pub,
            },
        )
        .map_err(|_| CryptoError::AuthFailure)
}

fn passphrase_key(passphrase: &str, salt: &[u8], rounds: u32) -> Zeroizing<[u8; 32]> {
    let mut key = Zeroizing::new([0u8; 32]);
    pbkdf2::pbkdf2_hmac::<Sha256>(passphrase.as_bytes(), salt, rounds, &mut key[..]);
    key
}

/// Symmetric sealing under a passphrase (PBKDF2-HMAC-SHA256 + ChaCha20-Poly1305).
pub fn seal_with_passphrase<R: RngCore + CryptoRng>(
    passphrase: &str,
    plaintext: &[u8],
    rounds: u32,
    rng: &mut R,
) -> Vec<u8> {
    let mut kdf_salt = [0u8; 16];
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut kdf_salt);
    rng.fill_bytes(&mut nonce);
    let key = passphrase_key(passphrase, &kdf_salt, rounds);
    let body = ChaCha20Poly1305::new(Key::from_slice(&key[..]))
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("in-memory encryption cannot fail");
    MapBuilder::new()
        .field("body", body)
        .field("nonce", nonce.to_vec())
        .field("rounds", u64::from(rounds))
        .field("salt", kdf_salt.to_vec())
        .build()
        .to_bytes()
}

pub fn open_with_passphrase(passphrase: &str, blob: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let mut m = MapReader::new(Value::from_bytes(blob)?)?;
    let body = m.bytes("body")?;
    let nonce: [u8; 12] = m.fixed("nonce")?;
    let rounds = m.uint("rounds")?;
    let kdf_salt: [u8; 16] = m.fixed("salt")?;
    m.finish()?;
    let rounds = u32::try_from(rounds)
        .ok()
        .filter(|r| *r > 0)
        .ok_or(CryptoError::AuthFailure)?;
    let key = passphrase_key(passphrase, &kdf_salt, rounds);
    ChaCha20Poly1305::new(Key::from_slice(&key[..]))
        .decrypt(Nonce::from_slice(&nonce), body.as_slice())
        .map_err(|_| CryptoError::AuthFailure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{CryptoRng, RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn keypair() -> (SigningKeyHandle, VerifyingKey) {
        generate_keypair().unwrap()
    }

    #[test]
    fn sign_verify_round_trip() {
        let (h, vk) = keypair();
        let sig = sign(&h, b"abc");
        assert!(verify(&vk, b"abc", &sig));
        assert!(!verify(&vk, b"abd", &sig));
    }

    #[test]
    fn flipped_signature_bit_is_rejected() {
        let (h, vk) = keypair();
        let mut sig = sign(&h, b"abc");
        sig.0[10] ^= 0x01;
        assert!(!verify(&vk, b"abc", &sig));
    }

    #[test]
    fn wrong_key_is_rejected() {
        let (h1, vk1) = keypair();
        let (_, vk2) = keypair();
        assert_ne!(vk1, vk2);
        assert!(!verify(&vk2, b"m", &sign(&h1, b"m")));
    }

    #[test]
    fn truncated_signature_is_false_not_panic() {
        let (h, vk) = keypair();
        let sig = sign(&h, b"abc");
        assert!(!verify_bytes(&vk, b"abc", &sig.0[..63]));
        assert!(!verify_bytes(&vk, b"abc", &[]));
    }

    #[test]
    fn empty_message_is_signable() {
        let (h, vk) = keypair();
        assert!(verify(&vk, b"", &sign(&h, b"")));
    }

    #[test]
    fn key_scheme_mismatch_is_rejected() {
        let (_, vk) = keypair();
        let mut raw = *vk.as_bytes();
        raw[0] = 0x02;
        assert_eq!(
            VerifyingKey::from_bytes(&raw),
            Err(CryptoError::UnsupportedScheme(0x02))
        );
        assert_eq!(
            VerifyingKey::from_bytes(&raw[..64]),
            Err(CryptoError::MalformedKey)
        );
    }

    #[test]
    fn salted_hash_matches_reference_sha256() {
        // Reference: SHA-256 over the tag byte, the value, and the salt.
        let salt = Salt([0xab; SALT_LEN]);
        let mut reference = Sha256::new();
        reference.update([0x02u8]);
        reference.update([0xabu8; 16]);
        let expected: [u8; 32] = reference.finalize().into();
        assert_eq!(salted_hash(b"", &salt).0, expected);
        // Frozen from Python: hashlib.sha256(b'\x02' + b'\xab' * 16)
        assert_eq!(
            salted_hash(b"", &salt).to_hex(),
            "a40bd5f9f2772227e46983056eba792fce45fba55538e2680facda0230b87d8d"
        );
    }

    #[test]
    fn salt_separates_equal_values() {
        let a = salted_hash(b"Alice", &Salt::random());
        let b = salted_hash(b"Alice", &Salt::random());
        assert_ne!(a, b);
        let s = Salt::random();
        assert_eq!(salted_hash(b"Alice", &s), salted_hash(b"Alice", &s));
    }

    #[test]
    fn encrypt_round_trip_and_wrong_key() {
        let (h, vk) = keypair();
        let (other, _) = keypair();
        let ct = encrypt_to(&vk, b"K7Q2M9A").unwrap();
        assert_eq!(decrypt(&h, &ct).unwrap(), b"K7Q2M9A");
        assert_eq!(decrypt(&other, &ct), Err(CryptoError::AuthFailure));
    }

    #[test]
    fn tampered_ciphertext_fails() {
        let (h, vk) = keypair();
        let ct = encrypt_to(&vk, b"secret").unwrap();
        let mut body = ct.clone();
        body.body[0] ^= 1;
        assert_eq!(decrypt(&h, &body), Err(CryptoError::AuthFailure));
        let mut eph = ct.clone();
        eph.ephemeral_pub[3] ^= 1;
        assert_eq!(decrypt(&h, &eph), Err(CryptoError::AuthFailure));
        let mut nonce = ct;
        nonce.nonce[0] ^= 1;
        assert_eq!(decrypt(&h, &nonce), Err(CryptoError::AuthFailure));
    }

    #[test]
    fn encryption_is_randomized() {
        let (_, vk) = keypair();
        let a = encrypt_to(&vk, b"same").unwrap();
        let b = encrypt_to(&vk, b"same").unwrap();
        assert_ne!(a.canonical_bytes(), b.canonical_bytes());
    }

    #[test]
    fn seeded_keygen_is_deterministic() {
        let (_, a) = generate_keypair_with(&mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        let (_, b) = generate_keypair_with(&mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    struct FailingRng;
    impl RngCore for FailingRng {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, _: &mut [u8]) {}
        fn try_fill_bytes(&mut self, _: &mut [u8]) -> Result<(), rand::Error> {
            Err(rand::Error::new("entropy unavailable"))
        }
    }
    impl CryptoRng for FailingRng {}

    #[test]
    fn randomness_failure_surfaces() {
        assert!(matches!(
            generate_keypair_with(&mut FailingRng),
            Err(CryptoError::Randomness)
        ));
    }

    #[test]
    fn sealed_export_round_trips_and_needs_passphrase() {
        let (h, vk) = keypair();
        let blob = h.export_sealed_with_rounds("pw", 1_000, &mut OsRng);
        let (h2, vk2) = SigningKeyHandle::import_sealed(&blob, "pw").unwrap();
        assert_eq!(vk, vk2);
        assert!(verify(&vk, b"x", &sign(&h2, b"x")));
        assert!(SigningKeyHandle::import_sealed(&blob, "wrong").is_err());
    }

    #[test]
    fn handle_debug_does_not_leak_material() {
        let (h, _) = keypair();
        let shown = format!("{h:?}");
        assert!(shown.starts_with("SigningKeyHandle"));
        assert!(!shown.contains(&hex::encode(h.material.signing.as_bytes())));
    }

    #[test]
    fn forgery_attempts_fail() {
        let (_, vk) = keypair();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let mut msg = [0u8; 24];
            let mut sig = [0u8; 64];
            rng.fill_bytes(&mut msg);
            rng.fill_bytes(&mut sig);
            assert!(!verify_bytes(&vk, &msg, &sig));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn prop_sign_verify(msg in prop::collection::vec(any::<u8>(), 0..256)) {
            let (h, vk) = keypair();
            prop_assert!(verify(&vk, &msg, &sign(&h, &msg)));
        }

        #[test]
        fn prop_encrypt_decrypt(msg in prop::collection::vec(any::<u8>(), 0..256)) {
            let (h, vk) = keypair();
            let ct = encrypt_to(&vk, &msg).unwrap();
            prop_assert_eq!(decrypt(&h, &ct).unwrap(), msg);
        }
    }
}

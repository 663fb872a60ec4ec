//! User/venue channel and the admission exchange.
//!
//! The channel is a simulated stand-in for TLS: the user checks the venue's
//! identity under its trust mode, then sends a fresh session key encrypted to
//! the venue's channel key. Everything after that is AEAD under the session
//! key, except the challenge, which the venue encrypts to the user's own key
//! taken from the verified status.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::{CryptoRng, RngCore};
use rand::rngs::OsRng;
use thiserror::Error;
use zeroize::Zeroizing;

use super::challenge::{ChallengeClock, ChallengeError, DEFAULT_ROTATION_SECS};
use super::venue::{TrustMode, VenueIdentity};
use crate::canonical::Canonical;
use crate::crypto::{self, CryptoError, PkCiphertext, SigningKeyHandle, VerifyingKey};
use crate::vaccination::{Status, VaccinationLevel};
use crate::verification::verify_status;
use crate::wallet::{WalletError, WalletState};

const STATUS_AAD: &[u8] = b"vaxcred/channel/status";

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum SessionState {
    Init,
    Established,
    StatusReceived,
    ChallengeSent,
    Closed,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("venue identity failed the trust check")]
    TrustFailure,
    #[error("operation not allowed in state {0:?}")]
    WrongState(SessionState),
    #[error("status carries no user key")]
    Unsupported,
    #[error("ciphertext is not addressed to this wallet")]
    AuthFailure,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Direction {
    ToVenue,
    ToUser,
}

/// Bytes as they crossed the medium.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GroupReject {
    /// Channel or status message could not be opened or decoded.
    Malformed,
    BadSignature,
    InsufficientLevel(VaccinationLevel),
    Unsupported,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum VenueResponse {
    Challenge(PkCiphertext),
    Reject(GroupReject),
}

pub struct ChannelSession {
    state: SessionState,
    venue: Option<VenueIdentity>,
    key: Option<Zeroizing<[u8; 32]>>,
    user_pk: Option<VerifyingKey>,
    transcript: Vec<TranscriptEntry>,
}

impl Default for ChannelSession {
    fn default() -> Self {
        Self::new()
    }
}

impl ChannelSession {
    pub fn new() -> Self {
        ChannelSession {
            state: SessionState::Init,
            venue: None,
            key: None,
            user_pk: None,
            transcript: Vec::new(),
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn venue(&self) -> Option<&VenueIdentity> {
        self.venue.as_ref()
    }

    /// User key learned by the venue from the verified status.
    pub fn user_pk(&self) -> Option<&VerifyingKey> {
        self.user_pk.as_ref()
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    fn require(&self, s: SessionState) -> Result<(), SessionError> {
        if self.state == s {
            Ok(())
        } else {
            Err(SessionError::WrongState(self.state))
        }
    }

    /// A failed trust check closes the session.
    pub fn establish<R: RngCore + CryptoRng>(
        &mut self,
        identity: &VenueIdentity,
        mode: &TrustMode,
        rng: &mut R,
    ) -> Result<(), SessionError> {
        self.require(SessionState::Init)?;
        if !mode.accepts(identity) {
            self.close();
            return Err(SessionError::TrustFailure);
        }
        let mut key = Zeroizing::new([0u8; 32]);
        rng.try_fill_bytes(&mut key[..])
            .map_err(|_| CryptoError::Randomness)?;
        let handshake = crypto::encrypt_to_with(&identity.channel_pk, &key[..], rng)?;
        self.transcript.push(TranscriptEntry {
            direction: Direction::ToVenue,
            bytes: handshake.canonical_bytes(),
        });
        self.venue = Some(identity.clone());
        self.key = Some(key);
        self.state = SessionState::Established;
        Ok(())
    }

    pub fn submit_status<R: RngCore + CryptoRng>(
        &mut self,
        status: &Status,
        rng: &mut R,
    ) -> Result<(), SessionError> {
        self.require(SessionState::Established)?;
        if status.user_pk().is_none() {
            return Err(SessionError::Unsupported);
        }
        let key = self.key.as_ref().expect("established session has a key");
        let mut nonce = [0u8; 12];
        rng.try_fill_bytes(&mut nonce)
            .map_err(|_| CryptoError::Randomness)?;
        let body = ChaCha20Poly1305::new(Key::from_slice(&key[..]))
            .encrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: &status.canonical_bytes(),
                    aad: STATUS_AAD,
                },
            )
            .map_err(|_| CryptoError::AuthFailure)?;
        let mut bytes = nonce.to_vec();
        bytes.extend_from_slice(&body);
        self.transcript.push(TranscriptEntry {
            direction: Direction::ToVenue,
            bytes,
        });
        self.state = SessionState::StatusReceived;
        Ok(())
    }

    pub fn close(&mut self) {
        self.state = SessionState::Closed;
        self.key = None;
    }
}

/// Venue side of the admission exchange.
pub struct VenueRuntime {
    channel: SigningKeyHandle,
    identity: VenueIdentity,
    clock: ChallengeClock,
    badge_keys: Vec<VerifyingKey>,
    policy: VaccinationLevel,
}

impl VenueRuntime {
    pub fn start(
        channel: SigningKeyHandle,
        identity: VenueIdentity,
        period: u64,
        badge_keys: Vec<VerifyingKey>,
        seed: [u8; 32],
    ) -> Result<Self, ChallengeError> {
        Ok(Self::with_clock(channel, identity, ChallengeClock::new(period, seed)?, badge_keys))
    }

    pub fn with_clock(
        channel: SigningKeyHandle,
        identity: VenueIdentity,
        clock: ChallengeClock,
        badge_keys: Vec<VerifyingKey>,
    ) -> Self {
        VenueRuntime {
            channel,
            identity,
            clock,
            badge_keys,
            policy: VaccinationLevel::Fully,
        }
    }

    pub fn with_policy(mut self, policy: VaccinationLevel) -> Self {
        self.policy = policy;
        self
    }

    pub fn identity(&self) -> &VenueIdentity {
        &self.identity
    }

    pub fn clock(&self) -> &ChallengeClock {
        &self.clock
    }

    pub fn policy(&self) -> VaccinationLevel {
        self.policy
    }

    pub fn current_code(&self, now: u64) -> String {
        self.clock.current(now).k
    }

    pub fn guard_check(&self, shown: &str, now: u64) -> bool {
        self.clock.guard_check(shown, now)
    }

    fn open_status(&self, session: &ChannelSession) -> Option<Status> {
        let [handshake, status_msg] = session.transcript.as_slice() else {
            return None;
        };
        let ct = PkCiphertext::from_canonical_bytes(&handshake.bytes).ok()?;
        let key = Zeroizing::new(crypto::decrypt(&self.channel, &ct).ok()?);
        if key.len() != 32 || status_msg.bytes.len() < 12 {
            return None;
        }
        let (nonce, body) = status_msg.bytes.split_at(12);
        let plain = ChaCha20Poly1305::new(Key::from_slice(&key))
            .decrypt(Nonce::from_slice(nonce), Payload { msg: body, aad: STATUS_AAD })
            .ok()?;
        Status::from_canonical_bytes(&plain).ok()
    }

    /// Verifies the delivered status and, if it meets policy, answers with the
    /// current code encrypted to the user's key. Rejection closes the session
    /// and sends nothing.
    pub fn process_status<R: RngCore + CryptoRng>(
        &self,
        session: &mut ChannelSession,
        now: u64,
        rng: &mut R,
    ) -> Result<VenueResponse, SessionError> {
        session.require(SessionState::StatusReceived)?;
        let verdict = match self.open_status(session) {
            None => Err(GroupReject::Malformed),
            Some(status) => match verify_status(&self.badge_keys, &status) {
                Err(_) => Err(GroupReject::BadSignature),
                Ok(level) if level < self.policy => Err(GroupReject::InsufficientLevel(level)),
                Ok(_) => status.user_pk().copied().ok_or(GroupReject::Unsupported),
            },
        };
        match verdict {
            Ok(user_pk) => {
                let k = self.current_code(now);
                let ct = crypto::encrypt_to_with(&user_pk, k.as_bytes(), rng)?;
                session.transcript.push(TranscriptEntry {
                    direction: Direction::ToUser,
                    bytes: ct.canonical_bytes(),
                });
                session.user_pk = Some(user_pk);
                session.state = SessionState::ChallengeSent;
                Ok(VenueResponse::Challenge(ct))
            }
            Err(r) => {
                session.close();
                Ok(VenueResponse::Reject(r))
            }
        }
    }
}

pub fn venue_start(
    channel: SigningKeyHandle,
    identity: VenueIdentity,
    period: u64,
    badge_keys: Vec<VerifyingKey>,
) -> Result<VenueRuntime, ChallengeError> {
    let mut seed = [0u8; 32];
    OsRng.fill_bytes(&mut seed);
    VenueRuntime::start(channel, identity, period, badge_keys, seed)
}

/// `venue_start` with the default one-minute rotation.
pub fn venue_start_default(
    channel: SigningKeyHandle,
    identity: VenueIdentity,
    badge_keys: Vec<VerifyingKey>,
) -> VenueRuntime {
    venue_start(channel, identity, DEFAULT_ROTATION_SECS, badge_keys).expect("nonzero period")
}

pub fn establish_channel(identity: &VenueIdentity, mode: &TrustMode) -> Result<ChannelSession, SessionError> {
    let mut s = ChannelSession::new();
    s.establish(identity, mode, &mut OsRng)?;
    Ok(s)
}

pub fn user_submit_status(session: &mut ChannelSession, status: &Status) -> Result<(), SessionError> {
    session.submit_status(status, &mut OsRng)
}

pub fn venue_process_status(
    runtime: &VenueRuntime,
    session: &mut ChannelSession,
    now: u64,
) -> Result<VenueResponse, SessionError> {
    runtime.process_status(session, now, &mut OsRng)
}

/// Decrypts the challenge for on-screen display.
pub fn user_reveal(wallet: &WalletState, ct: &PkCiphertext) -> Result<String, SessionError> {
    let plain = wallet.decrypt(ct).map_err(|e| match e {
        WalletError::VariantMismatch => SessionError::Unsupported,
        _ => SessionError::AuthFailure,
    })?;
    String::from_utf8(plain).map_err(|_| SessionError::AuthFailure)
}

//! Rotating admission challenge.
//!
//! Each rotation window gets a fresh random value rendered as base-32
//! characters. The guard accepts the current window's code and, as a grace
//! for display latency, the immediately previous one.

use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

pub const DEFAULT_ROTATION_SECS: u64 = 60;
/// Random bits per challenge.
pub const CHALLENGE_BITS: u32 = 32;

const ALPHABET: &[u8; 32] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ234567";

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ChallengeError {
    #[error("rotation period must be at least one second")]
    ZeroPeriod,
    #[error("challenge width must be 1..=32 bits")]
    BadWidth,
}

/// Characters needed to render `bits` random bits.
pub fn code_len(bits: u32) -> usize {
    bits.div_ceil(5) as usize
}

/// Big-endian base-32 rendering of the low `bits` bits of `value`.
pub fn render_code(value: u32, bits: u32) -> String {
    let n = code_len(bits);
    (0..n)
        .rev()
        .map(|i| {
            let shift = 5 * i as u32;
            let digit = if shift >= 32 { 0 } else { (value >> shift) & 0x1f };
            ALPHABET[digit as usize] as char
        })
        .collect()
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ChallengeWindow {
    pub window_index: u64,
    pub k: String,
}

struct Windows {
    current: Option<ChallengeWindow>,
    previous: Option<ChallengeWindow>,
}

/// Windowed challenge source with an injected clock (`now` in seconds).
pub struct ChallengeClock {
    period: u64,
    bits: u32,
    windows: RwLock<Windows>,
    rng: Mutex<ChaCha20Rng>,
}

impl ChallengeClock {
    pub fn new(period: u64, seed: [u8; 32]) -> Result<Self, ChallengeError> {
        Self::with_bits(period, CHALLENGE_BITS, seed)
    }

    /// Narrower challenges for exhaustive small-space tests.
    pub fn with_bits(period: u64, bits: u32, seed: [u8; 32]) -> Result<Self, ChallengeError> {
        if period == 0 {
            return Err(ChallengeError::ZeroPeriod);
        }
        if !(1..=32).contains(&bits) {
            return Err(ChallengeError::BadWidth);
        }
        Ok(ChallengeClock {
            period,
            bits,
            windows: RwLock::new(Windows {
                current: None,
                previous: None,
            }),
            rng: Mutex::new(ChaCha20Rng::from_seed(seed)),
        })
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn window_of(&self, now: u64) -> u64 {
        now / self.period
    }

    fn fresh(&self, window_index: u64) -> ChallengeWindow {
        let raw = self.rng.lock().next_u32();
        let value = if self.bits == 32 { raw } else { raw & ((1 << self.bits) - 1) };
        ChallengeWindow {
            window_index,
            k: render_code(value, self.bits),
        }
    }

    /// Rotates if `now` has entered a later window. A clock that moves
    /// backwards never rotates.
    fn advance(&self, now: u64) {
        let idx = self.window_of(now);
        if self
            .windows
            .read()
            .current
            .as_ref()
            .is_some_and(|c| c.window_index >= idx)
        {
            return;
        }
        let mut w = self.windows.write();
        let cur_idx = w.current.as_ref().map(|c| c.window_index);
        match cur_idx {
            Some(c) if c >= idx => {}
            Some(c) => {
                let fresh = self.fresh(idx);
                let old = w.current.replace(fresh);
                // Grace covers only the window immediately before.
                w.previous = if c + 1 == idx { old } else { None };
            }
            None => w.current = Some(self.fresh(idx)),
        }
    }

    pub fn current(&self, now: u64) -> ChallengeWindow {
        self.advance(now);
        self.windows.read().current.clone().expect("advanced")
    }

    pub fn previous(&self, now: u64) -> Option<ChallengeWindow> {
        self.advance(now);
        self.windows.read().previous.clone()
    }

    /// Accepts the current window's code or the previous window's.
    pub fn guard_check(&self, shown: &str, now: u64) -> bool {
        self.advance(now);
        let shown = shown.trim().to_ascii_uppercase();
        let w = self.windows.read();
        let matches = |c: &Option<ChallengeWindow>| c.as_ref().is_some_and(|c| c.k == shown);
        matches(&w.current) || matches(&w.previous)
    }
}

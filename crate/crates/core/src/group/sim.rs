//! Scripted group-admission simulation over an in-memory medium.
//!
//! Each participant requests admission at a time taken from the clock script
//! and shows a code to the guard later. The run emits one event per line;
//! [`check_invariants`] reads those lines back and reports violations.

use std::collections::BTreeMap;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::challenge::{render_code, ChallengeClock, CHALLENGE_BITS};
use super::session::{user_reveal, ChannelSession, Direction, SessionError, VenueResponse, VenueRuntime};
use super::venue::{TrustMode, VenueIdentity};
use crate::canonical::Canonical;
use crate::coupon::{sign_coupon, CouponPayload, JobType, ZipCode};
use crate::crypto::{self, generate_keypair_with, PkCiphertext, SigningKeyHandle};
use crate::vaccination::{Status, StatusBinding, StatusPayload, VaccinationLevel};
use crate::wallet::{wallet_init_app_with, WalletState};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, PartialOrd, Ord)]
pub enum ParticipantKind {
    Vaccinated,
    Unvaccinated,
    /// Status signed by a key the venue does not trust.
    Forged,
    /// Substitutes its own channel key for the venue's.
    Mitm,
    /// Shows a legitimately obtained code two windows late.
    StaleReplay,
    /// Holds the full ciphertext transcript of an honest session.
    Eavesdropper,
}

impl ParticipantKind {
    pub const ALL: [ParticipantKind; 6] = [
        ParticipantKind::Vaccinated,
        ParticipantKind::Unvaccinated,
        ParticipantKind::Forged,
        ParticipantKind::Mitm,
        ParticipantKind::StaleReplay,
        ParticipantKind::Eavesdropper,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParticipantKind::Vaccinated => "vaccinated",
            ParticipantKind::Unvaccinated => "unvaccinated",
            ParticipantKind::Forged => "forged",
            ParticipantKind::Mitm => "mitm",
            ParticipantKind::StaleReplay => "stale_replay",
            ParticipantKind::Eavesdropper => "eavesdropper",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for ParticipantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TrustModeKind {
    IssuerSigned,
    QrPinned,
    CodePinned,
}

impl TrustModeKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "issuer" => Some(TrustModeKind::IssuerSigned),
            "qr" => Some(TrustModeKind::QrPinned),
            "code" => Some(TrustModeKind::CodePinned),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n_honest_vaccinated: usize,
    pub n_unvaccinated: usize,
    pub adversaries: Vec<ParticipantKind>,
    pub rotation_period: u64,
    pub trust_mode: TrustModeKind,
    /// Request times, assigned to participants round-robin.
    pub clock_script: Vec<u64>,
    /// Delay between receiving a code and showing it.
    pub show_delay: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_honest_vaccinated: 4,
            n_unvaccinated: 2,
            adversaries: vec![
                ParticipantKind::Forged,
                ParticipantKind::Mitm,
                ParticipantKind::StaleReplay,
                ParticipantKind::Eavesdropper,
            ],
            rotation_period: 60,
            trust_mode: TrustModeKind::IssuerSigned,
            clock_script: vec![0, 15, 30, 45, 61, 75, 100, 130],
            show_delay: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Outcome {
    pub participant: usize,
    pub kind: ParticipantKind,
    pub admitted: bool,
    pub expected: bool,
}

#[derive(Clone, Debug)]
pub struct SimReport {
    /// One `key=value` event per line.
    pub log: Vec<String>,
    pub outcomes: Vec<Outcome>,
}

impl SimReport {
    pub fn log_text(&self) -> String {
        let mut s = self.log.join("\n");
        s.push('\n');
        s
    }
}

struct Participant {
    kind: ParticipantKind,
    request_at: u64,
    show_at: u64,
    shown: Option<String>,
}

struct World {
    rng: ChaCha20Rng,
    issuer: SigningKeyHandle,
    rogue: SigningKeyHandle,
    venue: VenueRuntime,
    mode: TrustMode,
    /// Last honest transcript, for the eavesdropper.
    overheard: Vec<Vec<u8>>,
    log: Vec<String>,
}

impl World {
    fn wallet(&mut self, i: usize) -> WalletState {
        let coupon = sign_coupon(
            &self.issuer,
            CouponPayload {
                index: i as u64,
                zip_code: ZipCode::parse("02139").unwrap(),
                job_type: JobType::parse("other").unwrap(),
            },
        );
        wallet_init_app_with(coupon, &[("name", format!("participant-{i}"))], &mut self.rng).expect("non-empty pii")
    }

    fn status(&self, signer: &SigningKeyHandle, w: &WalletState, level: VaccinationLevel) -> Status {
        Status::sign(
            signer,
            StatusPayload {
                level,
                binding: StatusBinding::App {
                    user_pk: w.public_key().expect("app wallet"),
                    pii_root: w.pii_root().expect("app wallet"),
                },
                date: None,
            },
        )
    }

    fn emit(&mut self, t: u64, p: usize, kind: ParticipantKind, rest: String) {
        let w = self.venue.clock().window_of(t);
        self.log.push(format!("t={t} w={w} p={p} kind={kind} {rest}"));
    }

    /// Runs the exchange; returns the revealed code if one was obtained.
    fn exchange(
        &mut self,
        t: u64,
        p: usize,
        kind: ParticipantKind,
        identity: &VenueIdentity,
        wallet: &WalletState,
        status: &Status,
    ) -> Option<String> {
        let mut s = ChannelSession::new();
        match s.establish(identity, &self.mode, &mut self.rng) {
            Ok(()) => self.emit(t, p, kind, "ev=established".into()),
            Err(e) => {
                self.emit(t, p, kind, format!("ev=trust_failure reason={}", slug(&e)));
                return None;
            }
        }
        if let Err(e) = s.submit_status(status, &mut self.rng) {
            self.emit(t, p, kind, format!("ev=submit_error reason={}", slug(&e)));
            return None;
        }
        let resp = self.venue.process_status(&mut s, t, &mut self.rng).expect("status delivered");
        let received: usize = s
            .transcript()
            .iter()
            .filter(|e| e.direction == Direction::ToUser)
            .map(|e| e.bytes.len())
            .sum();
        match resp {
            VenueResponse::Challenge(ct) => match user_reveal(wallet, &ct) {
                Ok(k) => {
                    self.emit(t, p, kind, format!("ev=challenge bytes={received} k={k}"));
                    if kind == ParticipantKind::Vaccinated {
                        self.overheard = s.transcript().iter().map(|e| e.bytes.clone()).collect();
                    }
                    Some(k)
                }
                Err(e) => {
                    self.emit(t, p, kind, format!("ev=reveal_error reason={}", slug(&e)));
                    None
                }
            },
            VenueResponse::Reject(r) => {
                self.emit(t, p, kind, format!("ev=reject bytes={received} reason={r:?}"));
                None
            }
        }
    }

    fn guess(&mut self) -> String {
        render_code(self.rng.next_u32(), CHALLENGE_BITS)
    }

    fn request(&mut self, p: usize, part: &mut Participant) {
        let t = part.request_at;
        let kind = part.kind;
        let identity = self.venue.identity().clone();
        part.shown = match kind {
            ParticipantKind::Vaccinated | ParticipantKind::StaleReplay => {
                let w = self.wallet(p);
                let st = self.status(&self.issuer, &w, VaccinationLevel::Fully);
                self.exchange(t, p, kind, &identity, &w, &st)
            }
            ParticipantKind::Unvaccinated => {
                let w = self.wallet(p);
                let st = self.status(&self.issuer, &w, VaccinationLevel::NotVaccinated);
                self.exchange(t, p, kind, &identity, &w, &st).or_else(|| Some(self.guess()))
            }
            ParticipantKind::Forged => {
                let w = self.wallet(p);
                let st = self.status(&self.rogue, &w, VaccinationLevel::Fully);
                self.exchange(t, p, kind, &identity, &w, &st).or_else(|| Some(self.guess()))
            }
            ParticipantKind::Mitm => {
                // A victim whose connection the attacker intercepts.
                let (_, mitm_pk) = generate_keypair_with(&mut self.rng).expect("rng");
                let fake = VenueIdentity::self_signed(&identity.venue_id, mitm_pk);
                let w = self.wallet(p);
                let st = self.status(&self.issuer, &w, VaccinationLevel::Fully);
                self.exchange(t, p, kind, &fake, &w, &st).or_else(|| Some(self.guess()))
            }
            ParticipantKind::Eavesdropper => {
                let (eve, _) = generate_keypair_with(&mut self.rng).expect("rng");
                let mut got = None;
                for bytes in &self.overheard {
                    if let Ok(ct) = PkCiphertext::from_canonical_bytes(bytes) {
                        if let Ok(plain) = crypto::decrypt(&eve, &ct) {
                            got = String::from_utf8(plain).ok();
                        }
                    }
                }
                let recovered = got.is_some();
                let n = self.overheard.len();
                self.emit(t, p, kind, format!("ev=overheard messages={n} recovered={recovered}"));
                got.or_else(|| Some(self.guess()))
            }
        };
    }

    fn show(&mut self, p: usize, part: &Participant, expected: bool) -> bool {
        let t = part.show_at;
        let admitted = part.shown.as_deref().is_some_and(|k| self.venue.guard_check(k, t));
        let code = part.shown.as_deref().unwrap_or("-");
        self.emit(
            t,
            p,
            part.kind,
            format!("ev=show code={code} accepted={admitted} expected={expected}"),
        );
        admitted
    }
}

fn slug(e: &SessionError) -> &'static str {
    match e {
        SessionError::TrustFailure => "trust",
        SessionError::WrongState(_) => "state",
        SessionError::Unsupported => "unsupported",
        SessionError::AuthFailure => "auth",
        SessionError::Crypto(_) => "crypto",
    }
}

pub fn run_group_sim(cfg: &SimConfig) -> Result<SimReport, String> {
    if cfg.rotation_period == 0 {
        return Err("rotation period must be at least 1".into());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let (issuer, issuer_vk) = generate_keypair_with(&mut rng).map_err(|e| e.to_string())?;
    let (rogue, _) = generate_keypair_with(&mut rng).map_err(|e| e.to_string())?;
    let (channel, channel_pk) = generate_keypair_with(&mut rng).map_err(|e| e.to_string())?;
    let identity = VenueIdentity::issuer_signed(&issuer, "venue", channel_pk);
    let mode = match cfg.trust_mode {
        TrustModeKind::IssuerSigned => TrustMode::IssuerSigned(vec![issuer_vk]),
        TrustModeKind::QrPinned => TrustMode::QrPinned(identity.cert_digest()),
        TrustModeKind::CodePinned => TrustMode::CodePinned(identity.short_code()),
    };
    let mut clock_seed = [0u8; 32];
    rng.fill_bytes(&mut clock_seed);
    let clock = ChallengeClock::new(cfg.rotation_period, clock_seed).map_err(|e| e.to_string())?;
    let venue = VenueRuntime::with_clock(channel, identity, clock, vec![issuer_vk]);

    let kinds: Vec<ParticipantKind> = std::iter::repeat(ParticipantKind::Vaccinated)
        .take(cfg.n_honest_vaccinated)
        .chain(std::iter::repeat(ParticipantKind::Unvaccinated).take(cfg.n_unvaccinated))
        .chain(cfg.adversaries.iter().copied())
        .collect();
    let script = if cfg.clock_script.is_empty() { vec![0] } else { cfg.clock_script.clone() };
    let mut parts: Vec<Participant> = kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let request_at = script[i % script.len()];
            let show_at = match kind {
                ParticipantKind::StaleReplay => request_at + 2 * cfg.rotation_period,
                _ => request_at + cfg.show_delay,
            };
            Participant {
                kind,
                request_at,
                show_at,
                shown: None,
            }
        })
        .collect();

    // (time, phase, participant); requests before shows at equal times.
    let mut events: Vec<(u64, u8, usize)> = Vec::new();
    for (i, p) in parts.iter().enumerate() {
        events.push((p.request_at, 0, i));
        events.push((p.show_at, 1, i));
    }
    events.sort();

    let mut world = World {
        rng,
        issuer,
        rogue,
        venue,
        mode,
        overheard: Vec::new(),
        log: Vec::new(),
    };
    let period = cfg.rotation_period;
    let mut outcomes = Vec::new();
    for (_, phase, i) in events {
        if phase == 0 {
            world.request(i, &mut parts[i]);
        } else {
            let p = &parts[i];
            let expected = p.kind == ParticipantKind::Vaccinated && p.show_at / period <= p.request_at / period + 1;
            let admitted = world.show(i, p, expected);
            outcomes.push(Outcome {
                participant: i,
                kind: p.kind,
                admitted,
                expected,
            });
        }
    }
    outcomes.sort_by_key(|o| o.participant);
    Ok(SimReport { log: world.log, outcomes })
}

fn fields(line: &str) -> BTreeMap<&str, &str> {
    line.split_whitespace().filter_map(|tok| tok.split_once('=')).collect()
}

/// Reads a simulation log and lists every invariant violation found.
pub fn check_invariants(log: &str) -> Vec<String> {
    let mut violations = Vec::new();
    let mut codes_by_window: BTreeMap<&str, &str> = BTreeMap::new();
    let mut rejected: BTreeMap<&str, bool> = BTreeMap::new();
    for (n, line) in log.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line);
        let (Some(p), Some(kind), Some(ev)) = (f.get("p"), f.get("kind"), f.get("ev")) else {
            violations.push(format!("line {}: unparseable event", n + 1));
            continue;
        };
        let Some(kind) = ParticipantKind::parse(kind) else {
            violations.push(format!("line {}: unknown kind", n + 1));
            continue;
        };
        let honest = matches!(kind, ParticipantKind::Vaccinated | ParticipantKind::StaleReplay);
        match *ev {
            "challenge" => {
                if !honest {
                    violations.push(format!("line {}: {kind} participant {p} received a challenge", n + 1));
                }
                if let (Some(w), Some(k)) = (f.get("w"), f.get("k")) {
                    match codes_by_window.insert(w, k) {
                        Some(prev) if prev != *k => {
                            violations.push(format!("line {}: window {w} issued two codes", n + 1))
                        }
                        _ => {}
                    }
                }
            }
            "reject" => {
                rejected.insert(p, true);
                if f.get("bytes").is_some_and(|b| *b != "0") {
                    violations.push(format!("line {}: rejected participant {p} received bytes", n + 1));
                }
            }
            "overheard" => {
                if f.get("recovered") == Some(&"true") {
                    violations.push(format!("line {}: eavesdropper {p} recovered a code", n + 1));
                }
            }
            "show" => {
                let accepted = f.get("accepted") == Some(&"true");
                let expected = f.get("expected") == Some(&"true");
                if accepted != expected {
                    violations.push(format!(
                        "line {}: participant {p} ({kind}) accepted={accepted} expected={expected}",
                        n + 1
                    ));
                }
                if accepted && rejected.contains_key(p) {
                    violations.push(format!("line {}: rejected participant {p} admitted", n + 1));
                }
            }
            _ => {}
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_run_is_clean_and_deterministic() {
        let cfg = SimConfig::default();
        let a = run_group_sim(&cfg).unwrap();
        let b = run_group_sim(&cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(check_invariants(&a.log_text()), Vec::<String>::new());
        for o in &a.outcomes {
            assert_eq!(o.admitted, o.expected, "{o:?}");
        }
        assert!(a.outcomes.iter().any(|o| o.admitted));
    }

    #[test]
    fn every_trust_mode_and_kind() {
        for mode in [TrustModeKind::IssuerSigned, TrustModeKind::QrPinned, TrustModeKind::CodePinned] {
            for seed in 0..5 {
                let cfg = SimConfig {
                    trust_mode: mode,
                    adversaries: ParticipantKind::ALL.to_vec(),
                    seed,
                    ..SimConfig::default()
                };
                let r = run_group_sim(&cfg).unwrap();
                assert!(check_invariants(&r.log_text()).is_empty());
            }
        }
    }

    #[test]
    fn late_show_by_honest_user_is_refused() {
        let cfg = SimConfig {
            n_honest_vaccinated: 3,
            n_unvaccinated: 0,
            adversaries: vec![],
            clock_script: vec![0],
            show_delay: 130,
            ..SimConfig::default()
        };
        let r = run_group_sim(&cfg).unwrap();
        assert!(r.outcomes.iter().all(|o| !o.expected && !o.admitted));
        assert!(check_invariants(&r.log_text()).is_empty());
    }

    #[test]
    fn checker_flags_tampered_logs() {
        let r = run_group_sim(&SimConfig::default()).unwrap();
        let text = r.log_text();
        let forged = text.replacen("accepted=false expected=false", "accepted=true expected=false", 1);
        assert_eq!(check_invariants(&forged).len(), 1);
        let leaked = text.replacen("ev=reject bytes=0", "ev=reject bytes=40", 1);
        assert_eq!(check_invariants(&leaked).len(), 1);
        assert!(!check_invariants("garbage\n").is_empty());
    }

    #[test]
    fn zero_period_is_an_error() {
        let cfg = SimConfig {
            rotation_period: 0,
            ..SimConfig::default()
        };
        assert!(run_group_sim(&cfg).is_err());
    }
}

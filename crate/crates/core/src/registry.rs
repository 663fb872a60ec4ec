//! Issuer-held coupon state with atomic check-and-set transitions.
//!
//! Every transition is appended to a log before it becomes visible, and the
//! live map can always be rebuilt by replaying that log. When backed by a
//! file, each record is one line:
//!
//! ```text
//! <seq>\t<coupon_id hex>\t<seed|dose1|dose2>\t<YYYY-MM-DD|->\t<request digest hex|->
//! ```
//!
//! A truncated final line (crash mid-append) is discarded on replay.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use parking_lot::RwLock;
use thiserror::Error;

use crate::crypto::HashDigest;

/// Identifier of a coupon: the SHA-256 of its canonical payload.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CouponId(pub HashDigest);

impl CouponId {
    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        HashDigest::from_hex(s).map(CouponId)
    }
}

impl fmt::Debug for CouponId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CouponId({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for CouponId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CouponState {
    Unused,
    Dose1Used(NaiveDate),
    Dose2Used(NaiveDate),
}

impl CouponState {
    pub fn is_used(&self) -> bool {
        !matches!(self, CouponState::Unused)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, PartialOrd, Ord)]
pub enum Dose {
    First,
    Second,
}

impl Dose {
    pub fn from_number(n: u64) -> Option<Dose> {
        match n {
            1 => Some(Dose::First),
            2 => Some(Dose::Second),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Dose::First => 1,
            Dose::Second => 2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("unknown coupon")]
    UnknownCoupon,
    #[error("coupon already used")]
    AlreadyUsed,
    #[error("dose {0} not permitted from the current state")]
    InvalidTransition(u8),
    #[error("coupon already registered")]
    AlreadySeeded,
    #[error("registry has been dismantled")]
    Dismantled,
    #[error("dismantling not authorized")]
    NotAuthorized,
    #[error("log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("log i/o: {0}")]
    Io(String),
}

impl From<io::Error> for RegistryError {
    fn from(e: io::Error) -> Self {
        RegistryError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Transition {
    Seed,
    Dose1,
    Dose2,
}

impl Transition {
    fn as_str(self) -> &'static str {
        match self {
            Transition::Seed => "seed",
            Transition::Dose1 => "dose1",
            Transition::Dose2 => "dose2",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "seed" => Some(Transition::Seed),
            "dose1" => Some(Transition::Dose1),
            "dose2" => Some(Transition::Dose2),
            _ => None,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TransitionRecord {
    pub seq: u64,
    pub coupon_id: CouponId,
    pub transition: Transition,
    pub date: Option<NaiveDate>,
    /// Digest of the signing request that caused a dose transition.
    pub request: Option<HashDigest>,
}

impl TransitionRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\n",
            self.seq,
            self.coupon_id,
            self.transition.as_str(),
            self.date
                .map(|d| d.format("%Y-%m-%d").to_string())
                .unwrap_or_else(|| "-".into()),
            self.request
                .map(|r| r.to_hex())
                .unwrap_or_else(|| "-".into()),
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [seq, id, transition, date, request] = fields[..] else {
            return Err(format!("expected 5 fields, found {}", fields.len()));
        };
        let seq = seq.parse().map_err(|_| "bad sequence number")?;
        let coupon_id = CouponId::from_hex(id).ok_or("bad coupon id")?;
        let transition = Transition::parse(transition).ok_or("bad transition")?;
        let date = match date {
            "-" => None,
            d => Some(NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|_| "bad date")?),
        };
        let request = match request {
            "-" => None,
            r => Some(HashDigest::from_hex(r).ok_or("bad request digest")?),
        };
        Ok(TransitionRecord {
            seq,
            coupon_id,
            transition,
            date,
            request,
        })
    }
}

/// Outcome of a successful check-and-set.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MarkOutcome {
    Applied,
    /// The same request already performed this transition.
    Replayed,
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    state: CouponState,
    dose1_request: Option<HashDigest>,
    dose2_request: Option<HashDigest>,
}

impl Entry {
    fn fresh() -> Self {
        Entry {
            state: CouponState::Unused,
            dose1_request: None,
            dose2_request: None,
        }
    }
}

#[derive(Default)]
struct Inner {
    entries: HashMap<CouponId, Entry>,
    log: Vec<TransitionRecord>,
    next_seq: u64,
    dismantled: bool,
    dismantle_authorized: bool,
    file: Option<(PathBuf, File)>,
}

impl Inner {
    fn live(&self) -> Result<(), RegistryError> {
        if self.dismantled {
            Err(RegistryError::Dismantled)
        } else {
            Ok(())
        }
    }

    fn append(&mut self, record: TransitionRecord) -> Result<(), RegistryError> {
        if let Some((_, file)) = self.file.as_mut() {
            file.write_all(record.to_line().as_bytes())?;
        }
        self.next_seq = record.seq + 1;
        self.log.push(record);
        Ok(())
    }

    fn apply(&mut self, record: &TransitionRecord) -> Result<MarkOutcome, RegistryError> {
        match record.transition {
            Transition::Seed => {
                if self.entries.contains_key(&record.coupon_id) {
                    return Err(RegistryError::AlreadySeeded);
                }
                self.entries.insert(record.coupon_id, Entry::fresh());
                Ok(MarkOutcome::Applied)
            }
            Transition::Dose1 | Transition::Dose2 => {
                let date = record.date.ok_or(RegistryError::Corrupt {
                    line: record.seq as usize,
                    reason: "dose transition without date".into(),
                })?;
                let entry = self
                    .entries
                    .get_mut(&record.coupon_id)
                    .ok_or(RegistryError::UnknownCoupon)?;
                check_transition(entry, record.transition, record.request)?;
                match record.transition {
                    Transition::Dose1 => {
                        entry.state = CouponState::Dose1Used(date);
                        entry.dose1_request = record.request;
                    }
                    _ => {
                        entry.state = CouponState::Dose2Used(date);
                        entry.dose2_request = record.request;
                    }
                }
                Ok(MarkOutcome::Applied)
            }
        }
    }
}

/// Decides whether `transition` may fire from `entry`'s state.
///
/// Returns `Replayed` when the identical request already performed it.
fn check_transition(
    entry: &Entry,
    transition: Transition,
    request: Option<HashDigest>,
) -> Result<MarkOutcome, RegistryError> {
    use CouponState::*;
    match (transition, entry.state) {
        (Transition::Dose1, Unused) => Ok(MarkOutcome::Applied),
        (Transition::Dose2, Dose1Used(_)) => Ok(MarkOutcome::Applied),
        (Transition::Dose2, Unused) => Err(RegistryError::InvalidTransition(2)),
        (Transition::Dose1, _) if request.is_some() && entry.dose1_request == request => {
            Ok(MarkOutcome::Replayed)
        }
        (Transition::Dose2, Dose2Used(_)) if request.is_some() && entry.dose2_request == request => {
            Ok(MarkOutcome::Replayed)
        }
        (_, _) => Err(RegistryError::AlreadyUsed),
    }
}

/// Coupon-state store. Readers run concurrently; every mutation holds the
/// write lock for the whole check, log append and state update.
#[derive(Default)]
pub struct Registry {
    inner: RwLock<Inner>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.read();
        f.debug_struct("Registry")
            .field("entries", &inner.entries.len())
            .field("log", &inner.log.len())
            .field("dismantled", &inner.dismantled)
            .finish()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) a file-backed registry, replaying existing records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref().to_path_buf();
        let text = match std::fs::read(&path) {
            Ok(raw) => String::from_utf8_lossy(&raw).into_owned(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        let (records, valid_len) = parse_log(&text)?;
        let mut inner = replay_records(&records)?;
        // Drop a torn tail so later appends start on a clean line.
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(&path)?;
        file.set_len(valid_len as u64)?;
        drop(file);
        let file = OpenOptions::new().append(true).open(&path)?;
        inner.file = Some((path, file));
        Ok(Registry {
            inner: RwLock::new(inner),
        })
    }

    /// Rebuilds an in-memory registry from log records.
    pub fn replay(records: &[TransitionRecord]) -> Result<Self, RegistryError> {
        Ok(Registry {
            inner: RwLock::new(replay_records(records)?),
        })
    }

    pub fn seed<I: IntoIterator<Item = CouponId>>(&self, ids: I) -> Result<(), RegistryError> {
        let ids: Vec<CouponId> = ids.into_iter().collect();
        let mut inner = self.inner.write();
        inner.live()?;
        let mut unique = std::collections::HashSet::new();
        for id in &ids {
            if inner.entries.contains_key(id) || !unique.insert(*id) {
                return Err(RegistryError::AlreadySeeded);
            }
        }
        for id in ids {
            let record = TransitionRecord {
                seq: inner.next_seq,
                coupon_id: id,
                transition: Transition::Seed,
                date: None,
                request: None,
            };
            inner.append(record.clone())?;
            inner.apply(&record)?;
        }
        Ok(())
    }

    pub fn check(&self, id: &CouponId) -> Result<CouponState, RegistryError> {
        let inner = self.inner.read();
        inner.live()?;
        inner
            .entries
            .get(id)
            .map(|e| e.state)
            .ok_or(RegistryError::UnknownCoupon)
    }

    pub fn mark_used(&self, id: &CouponId, dose: Dose, date: NaiveDate) -> Result<(), RegistryError> {
        match self.mark_used_for_request(id, dose, date, None)? {
            MarkOutcome::Applied => Ok(()),
            MarkOutcome::Replayed => Err(RegistryError::AlreadyUsed),
        }
    }

    /// Atomic check-and-set tagged with the request that caused it. Retrying
    /// with the same request digest is reported as `Replayed` and changes
    /// nothing.
    pub fn mark_used_for_request(
        &self,
        id: &CouponId,
        dose: Dose,
        date: NaiveDate,
        request: Option<HashDigest>,
    ) -> Result<MarkOutcome, RegistryError> {
        let mut inner = self.inner.write();
        inner.live()?;
        let entry = inner.entries.get(id).ok_or(RegistryError::UnknownCoupon)?;
        let transition = match dose {
            Dose::First => Transition::Dose1,
            Dose::Second => Transition::Dose2,
        };
        if check_transition(entry, transition, request)? == MarkOutcome::Replayed {
            return Ok(MarkOutcome::Replayed);
        }
        let record = TransitionRecord {
            seq: inner.next_seq,
            coupon_id: *id,
            transition,
            date: Some(date),
            request,
        };
        inner.append(record.clone())?;
        inner.apply(&record)
    }

    pub fn authorize_dismantle(&self) {
        self.inner.write().dismantle_authorized = true;
    }

    /// Erases all entries and truncates the log. Idempotent once authorized.
    pub fn dismantle(&self) -> Result<(), RegistryError> {
        let mut inner = self.inner.write();
        if !inner.dismantle_authorized {
            return Err(RegistryError::NotAuthorized);
        }
        inner.entries.clear();
        inner.entries.shrink_to_fit();
        inner.log.clear();
        if let Some((path, file)) = inner.file.take() {
            file.set_len(0)?;
            drop(file);
            std::fs::remove_file(path)?;
        }
        inner.dismantled = true;
        Ok(())
    }

    pub fn is_dismantled(&self) -> bool {
        self.inner.read().dismantled
    }

    pub fn log(&self) -> Vec<TransitionRecord> {
        self.inner.read().log.clone()
    }

    pub fn snapshot(&self) -> BTreeMap<CouponId, CouponState> {
        self.inner
            .read()
            .entries
            .iter()
            .map(|(k, v)| (*k, v.state))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The publicly visible view: hashed identifiers and states only.
    pub fn public_view(&self) -> Vec<(String, CouponState)> {
        self.snapshot()
            .into_iter()
            .map(|(id, s)| (id.to_hex(), s))
            .collect()
    }

    pub fn path(&self) -> Option<PathBuf> {
        self.inner.read().file.as_ref().map(|(p, _)| p.clone())
    }
}

/// Parses log text. Returns records and the byte length of the valid prefix;
/// a torn final line is dropped, a bad line elsewhere is corruption.
pub fn parse_log(text: &str) -> Result<(Vec<TransitionRecord>, usize), RegistryError> {
    let mut records = Vec::new();
    let mut valid_len = 0;
    let mut rest = text;
    let mut line_no = 0;
    while !rest.is_empty() {
        line_no += 1;
        let Some(nl) = rest.find('\n') else {
            break;
        };
        let line = &rest[..nl];
        match TransitionRecord::parse_line(line) {
            Ok(r) => records.push(r),
            Err(_) if nl + 1 == rest.len() => break,
            Err(reason) => return Err(RegistryError::Corrupt { line: line_no, reason }),
        }
        valid_len += nl + 1;
        rest = &rest[nl + 1..];
    }
    Ok((records, valid_len))
}

fn replay_records(records: &[TransitionRecord]) -> Result<Inner, RegistryError> {
    let mut inner = Inner::default();
    for (i, r) in records.iter().enumerate() {
        if r.seq != inner.next_seq {
            return Err(RegistryError::Corrupt {
                line: i + 1,
                reason: format!("sequence {} where {} expected", r.seq, inner.next_seq),
            });
        }
        inner.apply(r).map_err(|e| RegistryError::Corrupt {
            line: i + 1,
            reason: e.to_string(),
        })?;
        inner.next_seq = r.seq + 1;
        inner.log.push(r.clone());
    }
    Ok(inner)
}

/// State map obtained by replaying `records` from scratch.
pub fn rebuild_state(
    records: &[TransitionRecord],
) -> Result<BTreeMap<CouponId, CouponState>, RegistryError> {
    Ok(Registry::replay(records)?.snapshot())
}

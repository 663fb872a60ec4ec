//! Badge, Status and Passkey: the credentials a pharmacy hands out.

use std::fmt;

use chrono::NaiveDate;
use rand::{CryptoRng, RngCore};

use crate::canonical::{decode_list, encode_list, Canonical, DecodeError, MapBuilder, MapReader, Value};
use crate::coupon::Coupon;
use crate::crypto::{self, passkey_hash, salted_hash, HashDigest, Salt, Signature, SigningKeyHandle, VerifyingKey};
use crate::registry::CouponId;

const MAX_TEXT: usize = 64;

fn bounded_text(m: &mut MapReader, key: &'static str) -> Result<String, DecodeError> {
    let s = m.text(key)?;
    if s.is_empty() || s.len() > MAX_TEXT {
        return Err(DecodeError::Invalid {
            field: key,
            reason: format!("length must be 1..={MAX_TEXT}"),
        });
    }
    Ok(s)
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DoseInfo {
    pub product: String,
    pub lot: String,
    pub date: NaiveDate,
    pub dose_number: u8,
    pub site_id: String,
}

impl DoseInfo {
    pub fn new(product: &str, lot: &str, date: NaiveDate, dose_number: u8, site_id: &str) -> Self {
        DoseInfo {
            product: product.to_owned(),
            lot: lot.to_owned(),
            date,
            dose_number,
            site_id: site_id.to_owned(),
        }
    }

    pub fn is_future(&self, today: NaiveDate) -> bool {
        self.date > today
    }
}

impl Canonical for DoseInfo {
    fn to_value(&self) -> Value {
        MapBuilder::new()
            .field("date", self.date)
            .field("dose", u64::from(self.dose_number))
            .field("lot", self.lot.as_str())
            .field("product", self.product.as_str())
            .field("site", self.site_id.as_str())
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let date = m.date("date")?;
        let dose_number = match m.uint("dose")? {
            n @ (1 | 2) => n as u8,
            n => {
                return Err(DecodeError::Invalid {
                    field: "dose",
                    reason: format!("dose number {n}"),
                })
            }
        };
        let d = DoseInfo {
            lot: bounded_text(&mut m, "lot")?,
            product: bounded_text(&mut m, "product")?,
            site_id: bounded_text(&mut m, "site")?,
            date,
            dose_number,
        };
        m.finish()?;
        Ok(d)
    }
}

/// How a badge is tied to its holder.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum PiiBinding {
    /// Salted hash of the canonical PII list (paper card).
    Commitment(HashDigest),
    /// Root of the wallet's PII Merkle tree (app).
    TreeRoot(HashDigest),
}

impl PiiBinding {
    pub fn digest(&self) -> HashDigest {
        match self {
            PiiBinding::Commitment(d) | PiiBinding::TreeRoot(d) => *d,
        }
    }
}

impl Canonical for PiiBinding {
    fn to_value(&self) -> Value {
        let (kind, d) = match self {
            PiiBinding::Commitment(d) => ("commit", d),
            PiiBinding::TreeRoot(d) => ("root", d),
        };
        MapBuilder::new()
            .field("digest", *d)
            .field("kind", kind)
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let d = m.get("digest")?;
        let b = match m.text("kind")?.as_str() {
            "commit" => PiiBinding::Commitment(d),
            "root" => PiiBinding::TreeRoot(d),
            other => {
                return Err(DecodeError::Invalid {
                    field: "kind",
                    reason: format!("unknown binding `{other}`"),
                })
            }
        };
        m.finish()?;
        Ok(b)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BadgeInfo {
    pub dose_history: Vec<DoseInfo>,
    pub coupon: Coupon,
    pub pii_binding: PiiBinding,
}

impl BadgeInfo {
    pub fn coupon_id(&self) -> CouponId {
        self.coupon.id()
    }

    pub fn level(&self) -> VaccinationLevel {
        VaccinationLevel::from_dose_count(self.dose_history.len())
    }

    pub fn latest_dose(&self) -> &DoseInfo {
        self.dose_history.last().expect("history is never empty")
    }
}

impl Canonical for BadgeInfo {
    fn to_value(&self) -> Value {
        MapBuilder::new()
            .field("binding", self.pii_binding.to_value())
            .field("coupon", self.coupon.to_value())
            .field("doses", encode_list(&self.dose_history))
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let pii_binding = m.get("binding")?;
        let coupon = m.get("coupon")?;
        let dose_history: Vec<DoseInfo> = decode_list(m.list("doses")?)?;
        m.finish()?;
        let ordered = !dose_history.is_empty()
            && dose_history.len() <= 2
            && dose_history
                .iter()
                .enumerate()
                .all(|(i, d)| usize::from(d.dose_number) == i + 1);
        if !ordered {
            return Err(DecodeError::Invalid {
                field: "doses",
                reason: "history must be dose 1, or doses 1 and 2 in order".into(),
            });
        }
        Ok(BadgeInfo {
            dose_history,
            coupon,
            pii_binding,
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Badge {
    pub info: BadgeInfo,
    pub signature: Signature,
}

impl Badge {
    pub fn sign(key: &SigningKeyHandle, info: BadgeInfo) -> Self {
        let signature = crypto::sign(key, &info.canonical_bytes());
        Badge { info, signature }
    }

    pub fn verifies_under(&self, vk: &VerifyingKey) -> bool {
        crypto::verify(vk, &self.info.canonical_bytes(), &self.signature)
    }
}

impl Canonical for Badge {
    fn to_value(&self) -> Value {
        MapBuilder::new()
            .field("info", self.info.to_value())
            .field("sig", self.signature.to_value())
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let b = Badge {
            info: m.get("info")?,
            signature: m.get("sig")?,
        };
        m.finish()?;
        Ok(b)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum VaccinationLevel {
    NotVaccinated = 0,
    Dose1 = 1,
    Fully = 2,
}

impl VaccinationLevel {
    pub fn from_code(n: u64) -> Option<Self> {
        match n {
            0 => Some(VaccinationLevel::NotVaccinated),
            1 => Some(VaccinationLevel::Dose1),
            2 => Some(VaccinationLevel::Fully),
            _ => None,
        }
    }

    pub fn from_dose_count(n: usize) -> Self {
        match n {
            0 => VaccinationLevel::NotVaccinated,
            1 => VaccinationLevel::Dose1,
            _ => VaccinationLevel::Fully,
        }
    }

    pub fn code(self) -> u64 {
        self as u64
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "0" | "none" | "not-vaccinated" => Some(VaccinationLevel::NotVaccinated),
            "1" | "dose1" => Some(VaccinationLevel::Dose1),
            "2" | "fully" => Some(VaccinationLevel::Fully),
            _ => None,
        }
    }
}

impl fmt::Display for VaccinationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VaccinationLevel::NotVaccinated => "not-vaccinated",
            VaccinationLevel::Dose1 => "dose1",
            VaccinationLevel::Fully => "fully",
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum StatusBinding {
    PasskeyHash(HashDigest),
    App {
        user_pk: VerifyingKey,
        pii_root: HashDigest,
    },
}

impl Canonical for StatusBinding {
    fn to_value(&self) -> Value {
        match self {
            StatusBinding::PasskeyHash(d) => MapBuilder::new()
                .field("kind", "passkey")
                .field("passkey", *d)
                .build(),
            StatusBinding::App { user_pk, pii_root } => MapBuilder::new()
                .field("kind", "app")
                .field("pk", user_pk.to_value())
                .field("root", *pii_root)
                .build(),
        }
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let b = match m.text("kind")?.as_str() {
            "passkey" => StatusBinding::PasskeyHash(m.get("passkey")?),
            "app" => StatusBinding::App {
                user_pk: m.get("pk")?,
                pii_root: m.get("root")?,
            },
            other => {
                return Err(DecodeError::Invalid {
                    field: "kind",
                    reason: format!("unknown binding `{other}`"),
                })
            }
        };
        m.finish()?;
        Ok(b)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StatusPayload {
    pub level: VaccinationLevel,
    pub binding: StatusBinding,
    pub date: Option<NaiveDate>,
}

impl Canonical for StatusPayload {
    fn to_value(&self) -> Value {
        MapBuilder::new()
            .field("binding", self.binding.to_value())
            .opt_field("date", self.date)
            .field("level", self.level.code())
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let binding = m.get("binding")?;
        let date = m.date_opt("date")?;
        let code = m.uint("level")?;
        let level = VaccinationLevel::from_code(code).ok_or(DecodeError::Invalid {
            field: "level",
            reason: format!("level {code}"),
        })?;
        m.finish()?;
        Ok(StatusPayload {
            level,
            binding,
            date,
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Status {
    pub payload: StatusPayload,
    pub signature: Signature,
}

impl Status {
    pub fn sign(key: &SigningKeyHandle, payload: StatusPayload) -> Self {
        let signature = crypto::sign(key, &payload.canonical_bytes());
        Status { payload, signature }
    }

    pub fn verifies_under(&self, vk: &VerifyingKey) -> bool {
        crypto::verify(vk, &self.payload.canonical_bytes(), &self.signature)
    }

    pub fn user_pk(&self) -> Option<&VerifyingKey> {
        match &self.payload.binding {
            StatusBinding::App { user_pk, .. } => Some(user_pk),
            StatusBinding::PasskeyHash(_) => None,
        }
    }
}

impl Canonical for Status {
    fn to_value(&self) -> Value {
        MapBuilder::new()
            .field("payload", self.payload.to_value())
            .field("sig", self.signature.to_value())
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let s = Status {
            payload: m.get("payload")?,
            signature: m.get("sig")?,
        };
        m.finish()?;
        Ok(s)
    }
}

/// Ordered `(label, value)` list of personal details.
pub type PiiList = Vec<(String, String)>;

pub fn pii_to_value(pii: &[(String, String)]) -> Value {
    Value::List(
        pii.iter()
            .map(|(l, v)| MapBuilder::new().field("l", l.as_str()).field("v", v.as_str()).build())
            .collect(),
    )
}

fn pii_from_value(v: Value) -> Result<PiiList, DecodeError> {
    let Value::List(items) = v else {
        return Err(DecodeError::FieldType("pii"));
    };
    items
        .into_iter()
        .map(|item| {
            let mut m = MapReader::new(item)?;
            let pair = (m.text("l")?, m.text("v")?);
            m.finish()?;
            Ok(pair)
        })
        .collect()
}

/// Canonical bytes of a PII list, the input to the badge commitment.
pub fn canonical_pii(pii: &[(String, String)]) -> Vec<u8> {
    pii_to_value(pii).to_bytes()
}

/// The holder's PII and the salt that opens the commitment.
#[derive(Clone, PartialEq, Eq)]
pub struct Passkey {
    pub pii: PiiList,
    pub salt: Salt,
}

impl Passkey {
    pub fn new<R: RngCore + CryptoRng>(pii: PiiList, rng: &mut R) -> Self {
        Passkey {
            pii,
            salt: Salt::random_with(rng),
        }
    }

    /// Badge commitment: salted hash of the canonical PII list.
    pub fn commitment(&self) -> HashDigest {
        salted_hash(&canonical_pii(&self.pii), &self.salt)
    }

    /// Status binding: hash of the whole canonical passkey.
    pub fn hash(&self) -> HashDigest {
        passkey_hash(&self.canonical_bytes())
    }
}

impl fmt::Debug for Passkey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<&str> = self.pii.iter().map(|(l, _)| l.as_str()).collect();
        f.debug_struct("Passkey").field("labels", &labels).finish_non_exhaustive()
    }
}

impl Canonical for Passkey {
    fn to_value(&self) -> Value {
        MapBuilder::new()
            .field("pii", pii_to_value(&self.pii))
            .field("salt", self.salt)
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let pii = pii_from_value(m.take("pii")?)?;
        let salt = Salt(m.fixed("salt")?);
        m.finish()?;
        Ok(Passkey { pii, salt })
    }
}

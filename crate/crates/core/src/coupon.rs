//! Coupon issuance, verification and distribution.
//!
//! A coupon is the issuer's signature over `(index, zip code, job type)`.
//! Anyone holding the issuer's verifying key can check it offline; only the
//! registry decides whether it has been spent.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use parking_lot::Mutex;
use thiserror::Error;

use crate::canonical::{Canonical, DecodeError, MapBuilder, MapReader, Value};
use crate::crypto::{self, sha256, Signature, SigningKeyHandle, VerifyingKey};
use crate::registry::{CouponId, Registry, RegistryError};
use crate::wire::qr::{self, QrError};

/// Default closed list of job-type codes.
pub const JOB_TYPES: [&str; 8] = [
    "healthcare",
    "education",
    "emergency",
    "food_service",
    "transit",
    "agriculture",
    "corrections",
    "other",
];

/// Scheme prefix of coupon hand-off URLs.
pub const COUPON_URL_PREFIX: &str = "vaxcred:coupon?c=";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CouponError {
    #[error("invalid zip code `{0}`")]
    InvalidZip(String),
    #[error("unknown job type `{0}`")]
    InvalidJob(String),
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ZipCode(String);

impl ZipCode {
    pub fn parse(s: &str) -> Result<Self, CouponError> {
        if s.len() == 5 && s.bytes().all(|b| b.is_ascii_digit()) {
            Ok(ZipCode(s.to_owned()))
        } else {
            Err(CouponError::InvalidZip(s.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ZipCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for ZipCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JobType(String);

impl JobType {
    pub fn parse(s: &str) -> Result<Self, CouponError> {
        Self::parse_with(s, &JOB_TYPES)
    }

    /// Parses against a caller-supplied code list.
    pub fn parse_with(s: &str, catalog: &[&str]) -> Result<Self, CouponError> {
        if catalog.contains(&s) {
            Ok(JobType(s.to_owned()))
        } else {
            Err(CouponError::InvalidJob(s.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for JobType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for JobType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Hash)]
pub struct CouponPayload {
    pub index: u64,
    pub zip_code: ZipCode,
    pub job_type: JobType,
}

impl CouponPayload {
    pub fn id(&self) -> CouponId {
        CouponId(sha256(&self.canonical_bytes()))
    }
}

impl Canonical for CouponPayload {
    fn to_value(&self) -> Value {
        MapBuilder::new()
            .field("i", self.index)
            .field("job", self.job_type.as_str())
            .field("zip", self.zip_code.as_str())
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let index = m.uint("i")?;
        let job = m.text("job")?;
        let zip = m.text("zip")?;
        m.finish()?;
        let invalid = |field, e: CouponError| DecodeError::Invalid {
            field,
            reason: e.to_string(),
        };
        Ok(CouponPayload {
            index,
            // Decoding only enforces the format; catalog membership is the
            // issuer's concern and verification rests on the signature.
            job_type: if job.is_empty() || job.len() > 32 {
                return Err(invalid("job", CouponError::InvalidJob(job)));
            } else {
                JobType(job)
            },
            zip_code: ZipCode::parse(&zip).map_err(|e| invalid("zip", e))?,
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Coupon {
    pub payload: CouponPayload,
    pub signature: Signature,
}

impl Coupon {
    pub fn id(&self) -> CouponId {
        self.payload.id()
    }
}

impl Canonical for Coupon {
    fn to_value(&self) -> Value {
        MapBuilder::new()
            .field("payload", self.payload.to_value())
            .field("sig", self.signature.to_value())
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let c = Coupon {
            payload: CouponPayload::from_value(m.take("payload")?)?,
            signature: Signature::from_value(m.take("sig")?)?,
        };
        m.finish()?;
        Ok(c)
    }
}

pub fn sign_coupon(issuer: &SigningKeyHandle, payload: CouponPayload) -> Coupon {
    let signature = crypto::sign(issuer, &payload.canonical_bytes());
    Coupon { payload, signature }
}

/// Signs `n` coupons with indices `0..n` and registers each as unused.
pub fn issue_coupon_batch(
    issuer: &SigningKeyHandle,
    registry: &Registry,
    n: u64,
    zip_code: &str,
    job_type: &str,
) -> Result<Vec<Coupon>, CouponError> {
    issue_coupon_range(issuer, registry, 0, n, zip_code, job_type)
}

/// Signs coupons with indices `start..start + n` and registers them.
pub fn issue_coupon_range(
    issuer: &SigningKeyHandle,
    registry: &Registry,
    start: u64,
    n: u64,
    zip_code: &str,
    job_type: &str,
) -> Result<Vec<Coupon>, CouponError> {
    let zip_code = ZipCode::parse(zip_code)?;
    let job_type = JobType::parse(job_type)?;
    if n == 0 {
        return Err(CouponError::EmptyBatch);
    }
    let coupons: Vec<Coupon> = (start..start + n)
        .map(|index| {
            sign_coupon(
                issuer,
                CouponPayload {
                    index,
                    zip_code: zip_code.clone(),
                    job_type: job_type.clone(),
                },
            )
        })
        .collect();
    registry.seed(coupons.iter().map(Coupon::id))?;
    Ok(coupons)
}

/// Issuer that continues index numbering across batches for the same
/// `(zip, job)` pair.
pub struct CouponIssuer {
    key: SigningKeyHandle,
    next_index: Mutex<HashMap<(ZipCode, JobType), u64>>,
}

impl CouponIssuer {
    pub fn new(key: SigningKeyHandle) -> Self {
        CouponIssuer {
            key,
            next_index: Mutex::new(HashMap::new()),
        }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn issue_batch(
        &self,
        registry: &Registry,
        n: u64,
        zip_code: &str,
        job_type: &str,
    ) -> Result<Vec<Coupon>, CouponError> {
        let key = (ZipCode::parse(zip_code)?, JobType::parse(job_type)?);
        let mut next = self.next_index.lock();
        let start = next.get(&key).copied().unwrap_or(0);
        let batch = issue_coupon_range(&self.key, registry, start, n, zip_code, job_type)?;
        next.insert(key, start + n);
        Ok(batch)
    }
}

/// Signature check over the canonical payload. Takes no user identity: a
/// coupon verifies the same for whoever presents it.
pub fn verify_coupon(vk: &VerifyingKey, coupon: &Coupon) -> bool {
    crypto::verify(vk, &coupon.payload.canonical_bytes(), &coupon.signature)
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EligibilityRecord {
    pub subject_ref: String,
    pub zip_code: String,
    pub job_type: String,
    pub approved: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DistributeError {
    #[error("subject not eligible")]
    NotEligible,
    #[error("no coupon in the batch matches zip `{zip}` and job `{job}`")]
    Mismatch { zip: String, job: String },
    #[error("batch exhausted")]
    BatchExhausted,
}

/// Distributor-local hand-out state. Release tracking is advisory; losing it
/// never invalidates a coupon.
#[derive(Debug, Default)]
pub struct Distributor {
    batch: Vec<Coupon>,
    released: BTreeSet<u64>,
}

impl Distributor {
    pub fn new(mut batch: Vec<Coupon>) -> Self {
        batch.sort_by_key(|c| c.payload.index);
        Distributor {
            batch,
            released: BTreeSet::new(),
        }
    }

    pub fn with_released(batch: Vec<Coupon>, released: impl IntoIterator<Item = u64>) -> Self {
        let mut d = Self::new(batch);
        d.released.extend(released);
        d
    }

    pub fn released(&self) -> impl Iterator<Item = u64> + '_ {
        self.released.iter().copied()
    }

    pub fn remaining(&self) -> usize {
        self.batch.len() - self.released.len()
    }

    /// Hands out the lowest-index unreleased coupon matching the record.
    pub fn distribute(&mut self, record: &EligibilityRecord) -> Result<Coupon, DistributeError> {
        if !record.approved {
            return Err(DistributeError::NotEligible);
        }
        let mut matching = self
            .batch
            .iter()
            .filter(|c| {
                c.payload.zip_code.as_str() == record.zip_code
                    && c.payload.job_type.as_str() == record.job_type
            })
            .peekable();
        if matching.peek().is_none() {
            return Err(DistributeError::Mismatch {
                zip: record.zip_code.clone(),
                job: record.job_type.clone(),
            });
        }
        let coupon = matching
            .find(|c| !self.released.contains(&c.payload.index))
            .cloned()
            .ok_or(DistributeError::BatchExhausted)?;
        self.released.insert(coupon.payload.index);
        Ok(coupon)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CouponUrlError {
    #[error("not a coupon URL")]
    Malformed,
    #[error(transparent)]
    Decode(#[from] QrError),
    #[error("coupon signature invalid")]
    BadSignature,
}

pub fn export_coupon_url(coupon: &Coupon) -> String {
    format!("{COUPON_URL_PREFIX}{}", qr::encode_qr(coupon))
}

/// Decodes a hand-off URL and checks the issuer signature.
pub fn import_coupon_url(url: &str, issuer: &VerifyingKey) -> Result<Coupon, CouponUrlError> {
    let body = url
        .strip_prefix(COUPON_URL_PREFIX)
        .ok_or(CouponUrlError::Malformed)?;
    let coupon: Coupon = qr::decode_qr_unverified(body)?;
    if !verify_coupon(issuer, &coupon) {
        return Err(CouponUrlError::BadSignature);
    }
    Ok(coupon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_keypair;
    use std::collections::HashSet;

    fn setup() -> (SigningKeyHandle, VerifyingKey, Registry) {
        let (h, vk) = generate_keypair().unwrap();
        (h, vk, Registry::new())
    }

    #[test]
    fn batch_has_sequential_indices_and_verifies() {
        let (h, vk, reg) = setup();
        let batch = issue_coupon_batch(&h, &reg, 3, "02139", "healthcare").unwrap();
        let idx: Vec<u64> = batch.iter().map(|c| c.payload.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert!(batch.iter().all(|c| verify_coupon(&vk, c)));
        assert_eq!(reg.len(), 3);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let (h, _, reg) = setup();
        assert_eq!(
            issue_coupon_batch(&h, &reg, 1, "0213", "healthcare"),
            Err(CouponError::InvalidZip("0213".into()))
        );
        assert_eq!(
            issue_coupon_batch(&h, &reg, 1, "0213a", "healthcare"),
            Err(CouponError::InvalidZip("0213a".into()))
        );
        assert_eq!(
            issue_coupon_batch(&h, &reg, 1, "02139", "astronaut"),
            Err(CouponError::InvalidJob("astronaut".into()))
        );
        assert_eq!(
            issue_coupon_batch(&h, &reg, 0, "02139", "healthcare"),
            Err(CouponError::EmptyBatch)
        );
    }

    #[test]
    fn ten_thousand_coupons_have_distinct_ids() {
        let (h, _, reg) = setup();
        let batch = issue_coupon_batch(&h, &reg, 10_000, "02139", "education").unwrap();
        let ids: HashSet<_> = batch.iter().map(Coupon::id).collect();
        assert_eq!(ids.len(), 10_000);
    }

    #[test]
    fn issuer_continues_numbering_across_batches() {
        let (h, _, reg) = setup();
        let issuer = CouponIssuer::new(h);
        let a = issuer.issue_batch(&reg, 2, "02139", "transit").unwrap();
        let b = issuer.issue_batch(&reg, 2, "02139", "transit").unwrap();
        assert_eq!(a[1].payload.index, 1);
        assert_eq!(b[0].payload.index, 2);
        assert_eq!(reg.len(), 4);
    }

    #[test]
    fn altered_payload_fails_verification() {
        let (h, vk, reg) = setup();
        let mut c = issue_coupon_batch(&h, &reg, 1, "02139", "healthcare").unwrap()[0].clone();
        c.payload.zip_code = ZipCode::parse("02138").unwrap();
        assert!(!verify_coupon(&vk, &c));
    }

    #[test]
    fn rogue_distributor_key_cannot_mint() {
        let (_, vk, _) = setup();
        let (rogue, _) = generate_keypair().unwrap();
        let c = sign_coupon(
            &rogue,
            CouponPayload {
                index: 0,
                zip_code: ZipCode::parse("02139").unwrap(),
                job_type: JobType::parse("healthcare").unwrap(),
            },
        );
        assert!(!verify_coupon(&vk, &c));
    }

    fn record(zip: &str, approved: bool) -> EligibilityRecord {
        EligibilityRecord {
            subject_ref: "case-17".into(),
            zip_code: zip.into(),
            job_type: "healthcare".into(),
            approved,
        }
    }

    #[test]
    fn distributor_hands_out_lowest_index_first() {
        let (h, _, reg) = setup();
        let mut d = Distributor::new(issue_coupon_batch(&h, &reg, 2, "02139", "healthcare").unwrap());
        assert_eq!(d.distribute(&record("02139", true)).unwrap().payload.index, 0);
        assert_eq!(d.distribute(&record("02139", true)).unwrap().payload.index, 1);
        assert_eq!(
            d.distribute(&record("02139", true)),
            Err(DistributeError::BatchExhausted)
        );
    }

    #[test]
    fn distributor_gates_on_eligibility_and_match() {
        let (h, _, reg) = setup();
        let mut d = Distributor::new(issue_coupon_batch(&h, &reg, 2, "02139", "healthcare").unwrap());
        assert_eq!(
            d.distribute(&record("02139", false)),
            Err(DistributeError::NotEligible)
        );
        assert!(matches!(
            d.distribute(&record("10001", true)),
            Err(DistributeError::Mismatch { .. })
        ));
        assert_eq!(d.remaining(), 2);
    }

    #[test]
    fn url_round_trip_and_tamper() {
        let (h, vk, reg) = setup();
        let c = issue_coupon_batch(&h, &reg, 1, "02139", "healthcare").unwrap()[0].clone();
        let url = export_coupon_url(&c);
        assert_eq!(import_coupon_url(&url, &vk).unwrap(), c);

        let mut chars: Vec<char> = url.chars().collect();
        let pos = chars.len() - 20;
        chars[pos] = if chars[pos] == 'A' { 'B' } else { 'A' };
        let altered: String = chars.into_iter().collect();
        assert!(import_coupon_url(&altered, &vk).is_err());
        assert_eq!(
            import_coupon_url("https://example.org", &vk),
            Err(CouponUrlError::Malformed)
        );
    }

    #[test]
    fn url_length_matches_encoding_arithmetic() {
        let (h, _, reg) = setup();
        for job in JOB_TYPES {
            let c = issue_coupon_batch(&h, &reg, 1, "02139", job).unwrap()[0].clone();
            // payload map: header 5, "i" 1+1+9, "job" 1+3+5+len, "zip" 1+3+5+5
            let payload = 5 + 11 + (9 + job.len()) + 14;
            // coupon map: header 5, "payload" 1+7+payload, "sig" 1+3+5+64
            let coupon = 5 + 8 + payload + 73;
            let base32 = (coupon * 8).div_ceil(5);
            let expected = COUPON_URL_PREFIX.len() + "CPN1:".len() + base32;
            let url = export_coupon_url(&c);
            assert_eq!(url.len(), expected, "job {job}");
            assert!(url.len() <= 256);
        }
    }
}

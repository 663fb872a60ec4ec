//! Symptom reports and the raw report store.

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::registry::{CouponId, CouponState, Registry, RegistryError};
use crate::vaccination::DoseInfo;

const SYMPTOM_CODE_LIST: &str = include_str!("symptom_codes.txt");

/// Published symptom codes; the position of a code is its vector slot.
pub fn symptom_codes() -> Vec<&'static str> {
    SYMPTOM_CODE_LIST
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SymptomVector(Vec<u32>);

impl SymptomVector {
    pub fn new(counts: Vec<u32>) -> Self {
        SymptomVector(counts)
    }

    /// One-hot vector over the published code list.
    pub fn from_codes<S: AsRef<str>>(codes: &[S]) -> Result<Self, String> {
        let list = symptom_codes();
        let mut v = vec![0u32; list.len()];
        for c in codes {
            let c = c.as_ref();
            let i = list
                .iter()
                .position(|k| *k == c)
                .ok_or_else(|| format!("unknown symptom code `{c}`"))?;
            v[i] = 1;
        }
        Ok(SymptomVector(v))
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct DoseRef {
    pub product: String,
    pub lot: String,
    pub site_id: String,
}

impl From<&DoseInfo> for DoseRef {
    fn from(d: &DoseInfo) -> Self {
        DoseRef {
            product: d.product.clone(),
            lot: d.lot.clone(),
            site_id: d.site_id.clone(),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SymptomReport {
    pub vector: SymptomVector,
    /// Present on the coupon-bound path, absent for anonymous uploads.
    pub coupon_id: Option<CouponId>,
    pub dose_ref: Option<DoseRef>,
    pub timestamp: u64,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct CouponBoundRecord {
    pub coupon_id: String,
    pub dose_ref: Option<DoseRef>,
    pub vector: SymptomVector,
    pub timestamp: u64,
}

/// Has no coupon field at all, so nothing in the store can link it back.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct AnonymousRecord {
    pub dose_ref: Option<DoseRef>,
    pub vector: SymptomVector,
    pub timestamp: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum UploadReject {
    UnknownCoupon,
    /// The coupon exists but has not been used for a dose.
    NotVaccinated,
    Dismantled,
    WrongDimension,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum UploadDecision {
    Accepted,
    Rejected(UploadReject),
}

#[derive(Default)]
pub struct ReportStore {
    dim: usize,
    bound: Mutex<Vec<CouponBoundRecord>>,
    anonymous: Mutex<Vec<AnonymousRecord>>,
}

impl ReportStore {
    pub fn new(dim: usize) -> Self {
        ReportStore {
            dim,
            ..Default::default()
        }
    }

    pub fn coupon_bound(&self) -> Vec<CouponBoundRecord> {
        self.bound.lock().clone()
    }

    pub fn anonymous(&self) -> Vec<AnonymousRecord> {
        self.anonymous.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.bound.lock().len() + self.anonymous.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// JSON lines: coupon-bound records first, then anonymous ones.
    pub fn export_json_lines(&self) -> String {
        let mut out = String::new();
        for r in self.bound.lock().iter() {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        for r in self.anonymous.lock().iter() {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

pub fn upload_report(reg: &Registry, store: &ReportStore, report: SymptomReport) -> UploadDecision {
    if report.vector.dim() != store.dim {
        return UploadDecision::Rejected(UploadReject::WrongDimension);
    }
    match report.coupon_id {
        None => {
            store.anonymous.lock().push(AnonymousRecord {
                dose_ref: report.dose_ref,
                vector: report.vector,
                timestamp: report.timestamp,
            });
            UploadDecision::Accepted
        }
        Some(id) => match reg.check(&id) {
            Ok(CouponState::Unused) => UploadDecision::Rejected(UploadReject::NotVaccinated),
            Ok(_) => {
                store.bound.lock().push(CouponBoundRecord {
                    coupon_id: id.to_hex(),
                    dose_ref: report.dose_ref,
                    vector: report.vector,
                    timestamp: report.timestamp,
                });
                UploadDecision::Accepted
            }
            Err(RegistryError::Dismantled) => UploadDecision::Rejected(UploadReject::Dismantled),
            Err(_) => UploadDecision::Rejected(UploadReject::UnknownCoupon),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Dose;
    use crate::crypto::HashDigest;
    use chrono::NaiveDate;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, 1).unwrap()
    }

    #[test]
    fn code_list_has_sixteen_slots() {
        let codes = symptom_codes();
        assert_eq!(codes.len(), 16);
        assert_eq!(codes[0], "fever");
        let v = SymptomVector::from_codes(&["fever", "rash"]).unwrap();
        assert_eq!(v.counts().iter().sum::<u32>(), 2);
        assert_eq!(v.counts()[8], 1);
        assert!(SymptomVector::from_codes(&["sneezing"]).is_err());
    }

    #[test]
    fn upload_paths() {
        let reg = Registry::new();
        let used = CouponId(HashDigest([1; 32]));
        let fresh = CouponId(HashDigest([2; 32]));
        reg.seed([used]).unwrap();
        reg.seed([fresh]).unwrap();
        reg.mark_used(&used, Dose::First, day()).unwrap();
        let store = ReportStore::new(16);
        let v = SymptomVector::from_codes(&["fever"]).unwrap();
        let report = |id| SymptomReport {
            vector: v.clone(),
            coupon_id: id,
            dose_ref: None,
            timestamp: 7,
        };
        assert_eq!(upload_report(&reg, &store, report(Some(used))), UploadDecision::Accepted);
        assert_eq!(
            upload_report(&reg, &store, report(Some(fresh))),
            UploadDecision::Rejected(UploadReject::NotVaccinated)
        );
        assert_eq!(
            upload_report(&reg, &store, report(Some(CouponId(HashDigest([3; 32]))))),
            UploadDecision::Rejected(UploadReject::UnknownCoupon)
        );
        assert_eq!(upload_report(&reg, &store, report(None)), UploadDecision::Accepted);
        assert_eq!(store.coupon_bound().len(), 1);
        assert_eq!(store.anonymous().len(), 1);
        let bad = SymptomReport {
            vector: SymptomVector::new(vec![0; 3]),
            ..report(None)
        };
        assert_eq!(
            upload_report(&reg, &store, bad),
            UploadDecision::Rejected(UploadReject::WrongDimension)
        );
    }

    #[test]
    fn anonymous_store_has_no_coupon_field() {
        let reg = Registry::new();
        let store = ReportStore::new(16);
        for t in 0..5 {
            let r = SymptomReport {
                vector: SymptomVector::from_codes(&["headache"]).unwrap(),
                coupon_id: None,
                dose_ref: Some(DoseRef {
                    product: "P1".into(),
                    lot: "L-1".into(),
                    site_id: "S-1".into(),
                }),
                timestamp: t,
            };
            assert_eq!(upload_report(&reg, &store, r), UploadDecision::Accepted);
        }
        let dump = store.export_json_lines();
        assert_eq!(dump.lines().count(), 5);
        for line in dump.lines() {
            let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(line).unwrap();
            assert!(obj.keys().all(|k| !k.contains("coupon")), "{line}");
        }
    }

    #[test]
    fn dismantled_registry_refuses_bound_uploads() {
        let reg = Registry::new();
        let id = CouponId(HashDigest([1; 32]));
        reg.seed([id]).unwrap();
        reg.authorize_dismantle();
        reg.dismantle().unwrap();
        let store = ReportStore::new(16);
        let r = SymptomReport {
            vector: SymptomVector::new(vec![0; 16]),
            coupon_id: Some(id),
            dose_ref: None,
            timestamp: 0,
        };
        assert_eq!(
            upload_report(&reg, &store, r),
            UploadDecision::Rejected(UploadReject::Dismantled)
        );
    }
}

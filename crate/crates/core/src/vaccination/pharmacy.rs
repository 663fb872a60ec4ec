//! Pharmacy-side vaccination session.

use std::sync::Arc;

use chrono::NaiveDate;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::coupon::{verify_coupon, Coupon};
use crate::crypto::{HashDigest, VerifyingKey};
use crate::registry::{CouponState, Registry, RegistryError};

use super::credentials::{
    Badge, BadgeInfo, DoseInfo, Passkey, PiiBinding, PiiList, Status, StatusBinding, StatusPayload,
    VaccinationLevel,
};
use super::issuer::{request_signatures, SignError, SignRequest, SignResponse, SigningTransport, TransportError};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AdmitReject {
    BadSignature,
    AlreadyUsed,
    UnknownCoupon,
    Dismantled,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AdmitDecision {
    Admit,
    Reject(AdmitReject),
}

/// Pre-vaccination check. Advisory: the issuer repeats the authoritative
/// check-and-set when it signs.
pub fn pharmacy_admit(coupon_keys: &[VerifyingKey], registry: &Registry, coupon: &Coupon) -> AdmitDecision {
    if !coupon_keys.iter().any(|vk| verify_coupon(vk, coupon)) {
        return AdmitDecision::Reject(AdmitReject::BadSignature);
    }
    match registry.check(&coupon.id()) {
        Ok(CouponState::Unused) => AdmitDecision::Admit,
        Ok(_) => AdmitDecision::Reject(AdmitReject::AlreadyUsed),
        Err(RegistryError::Dismantled) => AdmitDecision::Reject(AdmitReject::Dismantled),
        Err(_) => AdmitDecision::Reject(AdmitReject::UnknownCoupon),
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IssueError {
    #[error("coupon not admitted: {0:?}")]
    NotAdmitted(AdmitReject),
    #[error("no PII supplied")]
    EmptyPii,
    #[error("dose date {0} is in the future")]
    FutureDose(NaiveDate),
    #[error("dose number {0} not valid here")]
    WrongDoseNumber(u8),
    #[error("credential signature invalid")]
    BadSignature,
    #[error("status does not belong with this badge")]
    BindingMismatch,
    #[error("coupon not in the state this dose requires")]
    WrongState,
    #[error("second-dose product does not match the first")]
    ProductMismatch,
    #[error("issuer rejected the request: {0}")]
    Rejected(SignError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("issuer returned signatures that do not verify")]
    BadResponse,
    #[error("no pending request to resume")]
    NothingPending,
}

/// Credentials produced by one issuance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Issued {
    pub badge: Badge,
    pub status: Status,
    /// Present for paper-card issuance only.
    pub passkey: Option<Passkey>,
}

struct Pending {
    request: SignRequest,
    passkey: Option<Passkey>,
}

pub struct PharmacySession<T> {
    site_id: String,
    today: NaiveDate,
    coupon_keys: Vec<VerifyingKey>,
    badge_key: VerifyingKey,
    transport: T,
    registry: Option<Arc<Registry>>,
    retain_pii: bool,
    retained: Vec<PiiList>,
    pending: Option<Pending>,
}

impl<T: SigningTransport> PharmacySession<T> {
    pub fn new(
        site_id: &str,
        today: NaiveDate,
        coupon_keys: Vec<VerifyingKey>,
        badge_key: VerifyingKey,
        transport: T,
    ) -> Self {
        PharmacySession {
            site_id: site_id.to_owned(),
            today,
            coupon_keys,
            badge_key,
            transport,
            registry: None,
            retain_pii: false,
            retained: Vec::new(),
            pending: None,
        }
    }

    /// Read access to the registry for the advisory pre-check.
    pub fn with_registry_view(mut self, registry: Arc<Registry>) -> Self {
        self.registry = Some(registry);
        self
    }

    pub fn retain_pii(mut self, retain: bool) -> Self {
        self.retain_pii = retain;
        self
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn today(&self) -> NaiveDate {
        self.today
    }

    pub fn set_today(&mut self, today: NaiveDate) {
        self.today = today;
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// PII kept after issuance; empty unless retention was enabled.
    pub fn retained_pii(&self) -> &[PiiList] {
        &self.retained
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    pub fn admit(&self, coupon: &Coupon) -> AdmitDecision {
        match &self.registry {
            Some(reg) => pharmacy_admit(&self.coupon_keys, reg, coupon),
            None if self.coupon_keys.iter().any(|vk| verify_coupon(vk, coupon)) => {
                AdmitDecision::Admit
            }
            None => AdmitDecision::Reject(AdmitReject::BadSignature),
        }
    }

    fn check_dose(&self, dose: &DoseInfo, number: u8) -> Result<(), IssueError> {
        if dose.dose_number != number {
            return Err(IssueError::WrongDoseNumber(dose.dose_number));
        }
        if dose.is_future(self.today) {
            return Err(IssueError::FutureDose(dose.date));
        }
        Ok(())
    }

    fn admit_or_err(&self, coupon: &Coupon) -> Result<(), IssueError> {
        match self.admit(coupon) {
            AdmitDecision::Admit => Ok(()),
            AdmitDecision::Reject(r) => Err(IssueError::NotAdmitted(r)),
        }
    }

    /// Paper-card issuance: Badge, Status and the Passkey that opens them.
    pub fn issue_credentials_paper<R: RngCore + CryptoRng>(
        &mut self,
        coupon: &Coupon,
        dose: DoseInfo,
        pii: PiiList,
        rng: &mut R,
    ) -> Result<Issued, IssueError> {
        self.admit_or_err(coupon)?;
        if pii.is_empty() {
            return Err(IssueError::EmptyPii);
        }
        self.check_dose(&dose, 1)?;
        let passkey = Passkey::new(pii, rng);
        let request = SignRequest {
            status_payload: StatusPayload {
                level: VaccinationLevel::Dose1,
                binding: StatusBinding::PasskeyHash(passkey.hash()),
                date: Some(dose.date),
            },
            badge_info: BadgeInfo {
                dose_history: vec![dose],
                coupon: coupon.clone(),
                pii_binding: PiiBinding::Commitment(passkey.commitment()),
            },
            prior_badge_sig: None,
        };
        self.submit(Pending {
            request,
            passkey: Some(passkey),
        })
    }

    /// App issuance: the wallet supplies its tree root and public key; the
    /// pharmacy never handles PII values.
    pub fn issue_credentials_app(
        &mut self,
        coupon: &Coupon,
        dose: DoseInfo,
        pii_root: HashDigest,
        user_pk: VerifyingKey,
    ) -> Result<Issued, IssueError> {
        self.admit_or_err(coupon)?;
        self.check_dose(&dose, 1)?;
        let request = SignRequest {
            status_payload: StatusPayload {
                level: VaccinationLevel::Dose1,
                binding: StatusBinding::App { user_pk, pii_root },
                date: Some(dose.date),
            },
            badge_info: BadgeInfo {
                dose_history: vec![dose],
                coupon: coupon.clone(),
                pii_binding: PiiBinding::TreeRoot(pii_root),
            },
            prior_badge_sig: None,
        };
        self.submit(Pending {
            request,
            passkey: None,
        })
    }

    /// Second dose: extends the badge history and refreshes the status to
    /// `Fully`, carrying the holder binding over from the presented status.
    pub fn second_dose(&mut self, badge: &Badge, status: &Status, dose2: DoseInfo) -> Result<Issued, IssueError> {
        if !badge.verifies_under(&self.badge_key) || !status.verifies_under(&self.badge_key) {
            return Err(IssueError::BadSignature);
        }
        let binding_ok = match (&badge.info.pii_binding, &status.payload.binding) {
            (PiiBinding::Commitment(_), StatusBinding::PasskeyHash(_)) => true,
            (PiiBinding::TreeRoot(r), StatusBinding::App { pii_root, .. }) => r == pii_root,
            _ => false,
        };
        if !binding_ok {
            return Err(IssueError::BindingMismatch);
        }
        if badge.info.dose_history.len() != 1 {
            return Err(IssueError::WrongState);
        }
        self.check_dose(&dose2, 2)?;
        if let Some(reg) = &self.registry {
            if reg.check(&badge.info.coupon_id()) != Ok(CouponState::Dose1Used(badge.info.latest_dose().date)) {
                return Err(IssueError::WrongState);
            }
        }
        let mut info = badge.info.clone();
        let date = dose2.date;
        info.dose_history.push(dose2);
        let request = SignRequest {
            badge_info: info,
            status_payload: StatusPayload {
                level: VaccinationLevel::Fully,
                binding: status.payload.binding,
                date: Some(date),
            },
            prior_badge_sig: Some(badge.signature),
        };
        self.submit(Pending {
            request,
            passkey: None,
        })
    }

    /// Resubmits a request whose response was lost. The issuer recognises the
    /// request digest, so this never causes a second registry transition.
    pub fn resume(&mut self) -> Result<Issued, IssueError> {
        let pending = self.pending.take().ok_or(IssueError::NothingPending)?;
        self.submit(pending)
    }

    fn submit(&mut self, pending: Pending) -> Result<Issued, IssueError> {
        let response = match request_signatures(&self.transport, &pending.request) {
            Ok(r) => r,
            Err(TransportError::Crashed) => {
                // The issuer may or may not have committed; keep the exact
                // request for `resume`.
                self.pending = Some(pending);
                return Err(IssueError::Transport(TransportError::Crashed));
            }
            Err(e) => return Err(e.into()),
        };
        let (sig_badge, sig_status) = match response {
            SignResponse::Signed {
                sig_badge,
                sig_status,
            } => (sig_badge, sig_status),
            SignResponse::Error(SignError::WrongState | SignError::AlreadyUsed)
                if pending.request.prior_badge_sig.is_some() =>
            {
                return Err(IssueError::WrongState)
            }
            SignResponse::Error(SignError::ProductMismatch) => return Err(IssueError::ProductMismatch),
            SignResponse::Error(e) => return Err(IssueError::Rejected(e)),
        };
        let Pending { request, passkey } = pending;
        let badge = Badge {
            info: request.badge_info,
            signature: sig_badge,
        };
        let status = Status {
            payload: request.status_payload,
            signature: sig_status,
        };
        if !badge.verifies_under(&self.badge_key) || !status.verifies_under(&self.badge_key) {
            return Err(IssueError::BadResponse);
        }
        if self.retain_pii {
            if let Some(pk) = &passkey {
                self.retained.push(pk.pii.clone());
            }
        }
        Ok(Issued {
            badge,
            status,
            passkey,
        })
    }
}

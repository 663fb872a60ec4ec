//! Pharmacy-side issuance of badge, status and passkey credentials, and the
//! badge issuer's signing service.

pub mod credentials;
pub mod issuer;
pub mod pharmacy;

pub use credentials::{
    canonical_pii, Badge, BadgeInfo, DoseInfo, Passkey, PiiBinding, PiiList, Status, StatusBinding,
    StatusPayload, VaccinationLevel,
};
pub use issuer::{
    request_signatures, serve, BadgeIssuer, LocalTransport, ProductRules, RecordingTransport,
    SignError, SignRequest, SignResponse, SigningTransport, TcpTransport, TransportError,
};
pub use pharmacy::{pharmacy_admit, AdmitDecision, AdmitReject, IssueError, Issued, PharmacySession};

//! Coupon-gated vaccination credentials.
//!
//! The crate covers the whole credential lifecycle: coupon issuance and the
//! double-spend registry, pharmacy issuance of badge/status/passkey
//! credentials (paper card and app variants), venue verification with
//! Merkle selective disclosure, contactless group admission with rotating
//! challenges, and private health-outcome reporting through two-server
//! additive sharing.

pub mod canonical;
pub mod coupon;
pub mod crypto;
pub mod group;
pub mod health;
pub mod registry;
pub mod scenario;
pub mod vaccination;
pub mod verification;
pub mod wallet;
pub mod wire;

pub use canonical::{Canonical, DecodeError};
pub use coupon::{Coupon, CouponPayload};
pub use crypto::{HashDigest, Salt, Signature, SigningKeyHandle, VerifyingKey};
pub use group::{ChannelSession, TrustMode, VenueIdentity, VenueRuntime};
pub use health::{AggregateResult, AlertFeed, FieldParams, SymptomReport, SymptomVector};
pub use registry::{CouponId, CouponState, Registry};
pub use scenario::{run_scenario, ScenarioScript, TranscriptLog};
pub use vaccination::{Badge, DoseInfo, Passkey, Status, VaccinationLevel};
pub use verification::TrustAnchors;
pub use wallet::{Presentation, WalletState};

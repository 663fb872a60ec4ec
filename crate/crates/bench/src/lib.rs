//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use vaxcred_core::coupon::issue_coupon_batch;
use vaxcred_core::crypto::{generate_keypair_with, SigningKeyHandle, VerifyingKey};
use vaxcred_core::vaccination::{BadgeIssuer, LocalTransport, PharmacySession};
use vaxcred_core::{Coupon, Registry};

pub const PII: [(&str, &str); 8] = [
    ("name", "Ada Example"),
    ("dob", "1990-01-01"),
    ("address", "1 Main St"),
    ("phone", "+1-555-0100"),
    ("id_number", "X1234567"),
    ("employer", "Transit Authority"),
    ("email", "ada@example.org"),
    ("insurance", "INS-0001"),
];

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// One issuer key used for coupons and credentials, a seeded registry and
/// `n` coupons.
pub struct World {
    pub key: SigningKeyHandle,
    pub vk: VerifyingKey,
    pub registry: Arc<Registry>,
    pub coupons: Vec<Coupon>,
}

impl World {
    pub fn new(n: u64, seed: u64) -> Self {
        let (key, vk) = generate_keypair_with(&mut rng(seed)).expect("keygen");
        let registry = Arc::new(Registry::new());
        let coupons = issue_coupon_batch(&key, &registry, n, "02139", "healthcare").expect("batch");
        World {
            key,
            vk,
            registry,
            coupons,
        }
    }

    pub fn pharmacy(&self, today: chrono::NaiveDate) -> PharmacySession<LocalTransport> {
        let issuer = Arc::new(BadgeIssuer::new(self.key.clone(), vec![self.vk], self.registry.clone()));
        PharmacySession::new("SITE-1", today, vec![self.vk], self.vk, LocalTransport::new(issuer))
            .with_registry_view(self.registry.clone())
    }
}

//! Two-server additive sharing over a prime field, plus Laplace noise on the
//! recombined totals.
//!
//! Each client splits its symptom vector `v` into a uniform share `a` and
//! `b = v - a mod p`, sending one share to each server. A server alone sees
//! uniform noise; only the combined sums reveal the aggregate.

use parking_lot::Mutex;
use rand::rngs::OsRng;
use rand::{CryptoRng, Rng, RngCore};
use thiserror::Error;

use super::report::SymptomVector;
use crate::canonical::{Canonical, DecodeError, MapBuilder, MapReader, Value};

pub const DEFAULT_MODULUS: u64 = (1 << 31) - 1;
pub const DEFAULT_ENTRY_BOUND: u64 = 1 << 16;
pub const DEFAULT_MAX_REPORTS: u64 = 1 << 14;
pub const DEFAULT_DIMENSION: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HealthError {
    #[error("modulus {p} must exceed max reports x entry bound = {need}")]
    ModulusTooSmall { p: u64, need: u64 },
    #[error("modulus {0} is not a prime below 2^32")]
    BadModulus(u64),
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("entry {index} out of range")]
    OutOfRange { index: usize },
    #[error("submission parameters do not match this server")]
    ParamMismatch,
    #[error("servers disagree on report count ({a} vs {b})")]
    CountMismatch { a: u64, b: u64 },
    #[error("combined total at slot {index} exceeds the possible range")]
    RangeViolation { index: usize },
    #[error("too many reports for the field size")]
    TooManyReports,
    #[error("epsilon must be positive and finite")]
    BadEpsilon,
    #[error("aggregate is already noised")]
    AlreadyNoised,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct FieldParams {
    pub p: u64,
    /// Exclusive upper bound on each vector entry.
    pub entry_bound: u64,
    pub max_reports: u64,
    pub dim: usize,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams {
            p: DEFAULT_MODULUS,
            entry_bound: DEFAULT_ENTRY_BOUND,
            max_reports: DEFAULT_MAX_REPORTS,
            dim: DEFAULT_DIMENSION,
        }
    }
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % m;
        }
        base = base * base % m;
        exp >>= 1;
    }
    acc
}

/// Miller-Rabin with bases 2, 7, 61, exact for all `n < 2^32`.
fn is_prime(n: u64) -> bool {
    debug_assert!(n < 1 << 32);
    if n < 2 {
        return false;
    }
    for q in [2, 3, 5, 7, 61] {
        if n % q == 0 {
            return n == q;
        }
    }
    let (mut d, mut r) = (n - 1, 0);
    while d % 2 == 0 {
        d /= 2;
        r += 1;
    }
    'bases: for a in [2u64, 7, 61] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = x * x % n;
            if x == n - 1 {
                continue 'bases;
            }
        }
        return false;
    }
    true
}

impl FieldParams {
    pub fn with_dim(dim: usize) -> Self {
        FieldParams {
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), HealthError> {
        if self.p >= 1 << 32 || !is_prime(self.p) {
            return Err(HealthError::BadModulus(self.p));
        }
        let need = self.max_reports.saturating_mul(self.entry_bound);
        if self.p <= need {
            return Err(HealthError::ModulusTooSmall { p: self.p, need });
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ShareBundle {
    pub share_a: Vec<u64>,
    pub share_b: Vec<u64>,
}

impl ShareBundle {
    pub fn recombine(&self, p: u64) -> Vec<u64> {
        self.share_a
            .iter()
            .zip(&self.share_b)
            .map(|(a, b)| (a + b) % p)
            .collect()
    }

    /// Wire messages for server A and server B, tagged with one nonce.
    pub fn submissions(&self, client_nonce: [u8; 16], p: u64) -> (ShareSubmission, ShareSubmission) {
        let mk = |elements: &Vec<u64>| ShareSubmission {
            client_nonce,
            dim: elements.len() as u64,
            p,
            elements: elements.clone(),
        };
        (mk(&self.share_a), mk(&self.share_b))
    }
}

pub fn split_shares(v: &SymptomVector, params: &FieldParams) -> Result<ShareBundle, HealthError> {
    split_shares_with(v, params, &mut OsRng)
}

pub fn split_shares_with<R: RngCore + CryptoRng>(
    v: &SymptomVector,
    params: &FieldParams,
    rng: &mut R,
) -> Result<ShareBundle, HealthError> {
    params.validate()?;
    let counts = v.counts();
    if counts.len() != params.dim {
        return Err(HealthError::LengthMismatch {
            expected: params.dim,
            got: counts.len(),
        });
    }
    if let Some(index) = counts.iter().position(|&c| c as u64 >= params.entry_bound) {
        return Err(HealthError::OutOfRange { index });
    }
    let p = params.p;
    let share_a: Vec<u64> = (0..params.dim).map(|_| rng.gen_range(0..p)).collect();
    let share_b = counts
        .iter()
        .zip(&share_a)
        .map(|(&v, &a)| (v as u64 + p - a) % p)
        .collect();
    Ok(ShareBundle { share_a, share_b })
}

/// One share as sent to a server.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ShareSubmission {
    pub client_nonce: [u8; 16],
    pub dim: u64,
    pub p: u64,
    pub elements: Vec<u64>,
}

impl Canonical for ShareSubmission {
    fn to_value(&self) -> Value {
        MapBuilder::new()
            .field("d", self.dim)
            .field(
                "elements",
                self.elements.iter().map(|&e| Value::from(e)).collect::<Vec<_>>(),
            )
            .field("nonce", self.client_nonce.to_vec())
            .field("p", self.p)
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let dim = m.uint("d")?;
        let elements = m
            .list("elements")?
            .into_iter()
            .map(|e| match e {
                Value::Uint(x) => Ok(x),
                _ => Err(DecodeError::Invalid {
                    field: "elements",
                    reason: "expected unsigned integers".into(),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let client_nonce = m.fixed("nonce")?;
        let p = m.uint("p")?;
        m.finish()?;
        if elements.len() as u64 != dim {
            return Err(DecodeError::Invalid {
                field: "d",
                reason: "length does not match elements".into(),
            });
        }
        Ok(ShareSubmission {
            client_nonce,
            dim,
            p,
            elements,
        })
    }
}

/// Running sum and count held by one server.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ServerAggregate {
    pub sums: Vec<u64>,
    pub n: u64,
}

pub struct AggregationServer {
    params: FieldParams,
    state: Mutex<ServerAggregate>,
}

impl AggregationServer {
    pub fn new(params: FieldParams) -> Result<Self, HealthError> {
        params.validate()?;
        Ok(AggregationServer {
            params,
            state: Mutex::new(ServerAggregate {
                sums: vec![0; params.dim],
                n: 0,
            }),
        })
    }

    pub fn params(&self) -> &FieldParams {
        &self.params
    }

    /// Folds one share into the running sum; the share itself is not kept.
    pub fn accumulate(&self, share: &[u64]) -> Result<(), HealthError> {
        let p = self.params.p;
        if share.len() != self.params.dim {
            return Err(HealthError::LengthMismatch {
                expected: self.params.dim,
                got: share.len(),
            });
        }
        if let Some(index) = share.iter().position(|&e| e >= p) {
            return Err(HealthError::OutOfRange { index });
        }
        let mut st = self.state.lock();
        if st.n >= self.params.max_reports {
            return Err(HealthError::TooManyReports);
        }
        for (s, e) in st.sums.iter_mut().zip(share) {
            *s = (*s + e) % p;
        }
        st.n += 1;
        Ok(())
    }

    pub fn accept(&self, sub: &ShareSubmission) -> Result<(), HealthError> {
        if sub.p != self.params.p || sub.dim != self.params.dim as u64 {
            return Err(HealthError::ParamMismatch);
        }
        self.accumulate(&sub.elements)
    }

    pub fn aggregate(&self) -> ServerAggregate {
        self.state.lock().clone()
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct AggregateResult {
    pub totals: Vec<i64>,
    pub n_reports: u64,
    pub epsilon: Option<f64>,
    pub noised: bool,
}

/// Adds the two servers' sums. A total above `n * (B - 1)` cannot come from
/// honest in-range vectors and is reported as a range violation.
pub fn combine_aggregates(
    a: &ServerAggregate,
    b: &ServerAggregate,
    params: &FieldParams,
) -> Result<AggregateResult, HealthError> {
    if a.n != b.n {
        return Err(HealthError::CountMismatch { a: a.n, b: b.n });
    }
    if a.sums.len() != params.dim || b.sums.len() != params.dim {
        return Err(HealthError::LengthMismatch {
            expected: params.dim,
            got: a.sums.len().min(b.sums.len()),
        });
    }
    let limit = a.n * (params.entry_bound - 1);
    let mut totals = Vec::with_capacity(params.dim);
    for (index, (x, y)) in a.sums.iter().zip(&b.sums).enumerate() {
        let t = (x + y) % params.p;
        if t > limit {
            return Err(HealthError::RangeViolation { index });
        }
        totals.push(t as i64);
    }
    Ok(AggregateResult {
        totals,
        n_reports: a.n,
        epsilon: None,
        noised: false,
    })
}

/// One draw from Laplace(0, scale) by inverting the CDF.
pub fn laplace_sample<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        // u = -0.5 maps to ln(0).
        if u > -0.5 {
            return -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
    }
}

/// Adds rounded Laplace(sensitivity / epsilon) noise to every total.
pub fn add_dp_noise<R: Rng + ?Sized>(
    agg: &AggregateResult,
    epsilon: f64,
    sensitivity: f64,
    rng: &mut R,
) -> Result<AggregateResult, HealthError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(HealthError::BadEpsilon);
    }
    if agg.noised {
        return Err(HealthError::AlreadyNoised);
    }
    let scale = sensitivity / epsilon;
    let totals = agg
        .totals
        .iter()
        .map(|&t| t + laplace_sample(scale, rng).round() as i64)
        .collect();
    Ok(AggregateResult {
        totals,
        n_reports: agg.n_reports,
        epsilon: Some(epsilon),
        noised: true,
    })
}

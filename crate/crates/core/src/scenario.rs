//! Scripted end-to-end runs over every role, on a logical clock.
//!
//! A script is one action per line:
//!
//! ```text
//! @<seconds> <role> <action> [args...]
//! ```
//!
//! Times are seconds from the scenario epoch; the calendar date of an action
//! is the epoch date plus whole days elapsed. Blank lines and `#` comments
//! are ignored. Supported actions:
//!
//! | line | effect |
//! |------|--------|
//! | `issuer batch <n> <zip> <job>` | issue and register a coupon batch |
//! | `user init <user> paper\|app` | declare a user and wallet variant |
//! | `distributor give <user> <zip> <job>` | eligibility check and hand-off |
//! | `user share <from> <to>` | copy a coupon to another user |
//! | `pharmacy dose1 <user> <site> <product> <lot>` | first dose |
//! | `pharmacy dose2 <user> <site> <product> <lot>` | second dose |
//! | `venue verify <user> <venue> <badge\|status\|passkey\|disclosure> [labels]` | presentation check |
//! | `venue group <user>` | contactless group admission |
//! | `user report <user> <codes> [anon]` | symptom upload and share split |
//! | `health aggregate [epsilon]` | recombine the two servers |
//!
//! Failed preconditions are logged as rejections; the run never aborts on
//! them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::coupon::{issue_coupon_batch, Coupon, Distributor, EligibilityRecord};
use crate::crypto::{generate_keypair_with, SigningKeyHandle, VerifyingKey};
use crate::group::{ChannelSession, ChallengeClock, TrustMode, VenueIdentity, VenueResponse, VenueRuntime};
use crate::health::{
    add_dp_noise, combine_aggregates, split_shares_with, upload_report, AggregationServer, DoseRef, FieldParams,
    ReportStore, SymptomReport, SymptomVector, UploadDecision,
};
use crate::registry::Registry;
use crate::vaccination::{
    AdmitDecision, BadgeIssuer, DoseInfo, IssueError, LocalTransport, PharmacySession, PiiList, RecordingTransport,
};
use crate::verification::{verify_presentation, VenueTranscript};
use crate::wallet::{wallet_init_app_with, Consent, PresentationKind, Variant, WalletState};

const DAY: u64 = 86_400;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Step {
    pub at: u64,
    pub role: String,
    pub action: String,
    pub args: Vec<String>,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{} {} {}", self.at, self.role, self.action)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct ScenarioScript {
    pub steps: Vec<Step>,
}

impl ScenarioScript {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut steps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: &str| ScriptError {
                line: i + 1,
                message: message.to_owned(),
            };
            let mut toks = line.split_whitespace();
            let at = toks
                .next()
                .and_then(|t| t.strip_prefix('@'))
                .ok_or_else(|| err("expected `@<time>`"))?
                .parse::<u64>()
                .map_err(|_| err("bad time stamp"))?;
            let role = toks.next().ok_or_else(|| err("missing role"))?.to_owned();
            let action = toks.next().ok_or_else(|| err("missing action"))?.to_owned();
            steps.push(Step {
                at,
                role,
                action,
                args: toks.map(str::to_owned).collect(),
            });
        }
        for w in steps.windows(2) {
            if w[1].at < w[0].at {
                return Err(ScriptError {
                    line: 0,
                    message: format!("time goes backwards at `{}`", w[1]),
                });
            }
        }
        Ok(ScenarioScript { steps })
    }

    pub fn to_text(&self) -> String {
        self.steps.iter().map(|s| format!("{s}\n")).collect()
    }

    /// Full lifecycle for `n` users, alternating paper and app wallets.
    pub fn happy_path(n: usize) -> Self {
        let mut s = String::new();
        let zip = "02139";
        let job = "healthcare";
        s += &format!("@0 issuer batch {n} {zip} {job}\n");
        for i in 0..n {
            let v = if i % 2 == 0 { "paper" } else { "app" };
            s += &format!("@0 user init u{i} {v}\n");
        }
        for i in 0..n {
            s += &format!("@{} distributor give u{i} {zip} {job}\n", 3600 + i);
        }
        for i in 0..n {
            s += &format!("@{} pharmacy dose1 u{i} SITE-{} PFZ LOT-A{}\n", DAY + i as u64, i % 3, i % 4);
        }
        for i in 0..n {
            s += &format!("@{} pharmacy dose2 u{i} SITE-{} PFZ LOT-B{}\n", 22 * DAY + i as u64, i % 3, i % 4);
        }
        let visit = 23 * DAY;
        for i in 0..n {
            let t = visit + i as u64;
            if i % 2 == 0 {
                s += &format!("@{t} venue verify u{i} clinic passkey\n");
                s += &format!("@{t} venue verify u{i} bar status\n");
            } else {
                s += &format!("@{t} venue verify u{i} bank disclosure name\n");
                s += &format!("@{t} venue verify u{i} bar status\n");
                s += &format!("@{t} venue group u{i}\n");
            }
        }
        let report = 24 * DAY;
        for i in 0..n {
            let codes = ["fever", "fatigue,headache", "injection_site_pain", "myalgia,chills,fever"][i % 4];
            let anon = if i % 3 == 0 { " anon" } else { "" };
            s += &format!("@{} user report u{i} {codes}{anon}\n", report + i as u64);
        }
        s += &format!("@{} health aggregate\n", 25 * DAY);
        ScenarioScript::parse(&s).expect("generated script is well formed")
    }
}

/// Everything a run produced.
#[derive(Clone, Debug, Default)]
pub struct TranscriptLog {
    pub lines: Vec<String>,
    /// Raw bytes every pharmacy sent to the badge issuer.
    pub issuer_messages: Vec<Vec<u8>>,
    /// Every PII value handed to any wallet or pharmacy.
    pub pii_values: Vec<String>,
    pub venue_transcripts: Vec<VenueTranscript>,
    pub accepted: usize,
    pub rejected: usize,
    pub violations: Vec<String>,
}

impl TranscriptLog {
    pub fn text(&self) -> String {
        self.lines.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn count_containing(&self, needle: &str) -> usize {
        self.lines.iter().filter(|l| l.contains(needle)).count()
    }
}

struct User {
    variant: Variant,
    wallet: Option<WalletState>,
    pii: PiiList,
}

struct Run {
    rng: ChaCha20Rng,
    epoch: NaiveDate,
    coupon_key: SigningKeyHandle,
    coupon_vk: VerifyingKey,
    badge_vk: VerifyingKey,
    registry: Arc<Registry>,
    transport: RecordingTransport<LocalTransport>,
    distributors: Vec<Distributor>,
    users: BTreeMap<String, User>,
    venue: VenueRuntime,
    venue_mode: TrustMode,
    store: ReportStore,
    params: FieldParams,
    server_a: AggregationServer,
    server_b: AggregationServer,
    plain_sum: Vec<i64>,
    plain_n: u64,
    log: TranscriptLog,
}

type Outcome = Result<String, String>;

impl Run {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (coupon_key, coupon_vk) = generate_keypair_with(&mut rng).expect("rng");
        let (badge_key, badge_vk) = generate_keypair_with(&mut rng).expect("rng");
        let (channel, channel_pk) = generate_keypair_with(&mut rng).expect("rng");
        let registry = Arc::new(Registry::new());
        let issuer = Arc::new(BadgeIssuer::new(badge_key, vec![coupon_vk], registry.clone()));
        let identity = VenueIdentity::issuer_signed(&coupon_key, "venue", channel_pk);
        let mut clock_seed = [0u8; 32];
        rng.fill_bytes(&mut clock_seed);
        let clock = ChallengeClock::new(60, clock_seed).expect("nonzero period");
        let venue = VenueRuntime::with_clock(channel, identity, clock, vec![badge_vk]);
        let params = FieldParams::default();
        Run {
            rng,
            epoch: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            coupon_key,
            coupon_vk,
            badge_vk,
            registry,
            transport: RecordingTransport::new(LocalTransport::new(issuer)),
            distributors: Vec::new(),
            users: BTreeMap::new(),
            venue,
            venue_mode: TrustMode::IssuerSigned(vec![coupon_vk]),
            store: ReportStore::new(params.dim),
            server_a: AggregationServer::new(params).expect("valid params"),
            server_b: AggregationServer::new(params).expect("valid params"),
            params,
            plain_sum: vec![0; params.dim],
            plain_n: 0,
            log: TranscriptLog::default(),
        }
    }

    fn date(&self, at: u64) -> NaiveDate {
        self.epoch + Duration::days((at / DAY) as i64)
    }

    fn pii_for(&mut self, name: &str) -> PiiList {
        let tag: String = (0..8)
            .map(|_| char::from(b'A' + self.rng.gen_range(0..26u8)))
            .collect();
        let pii = vec![
            ("name".to_owned(), format!("Person {name} {tag}")),
            ("dob".to_owned(), format!("19{:02}-{:02}-{:02}", self.rng.gen_range(40..99), self.rng.gen_range(1..13), self.rng.gen_range(1..29))),
            ("id_number".to_owned(), format!("ID-{}-{tag}", self.rng.gen_range(100_000..999_999))),
        ];
        self.log.pii_values.extend(pii.iter().map(|(_, v)| v.clone()));
        pii
    }

    fn pharmacy(&self, site: &str, today: NaiveDate) -> PharmacySession<&RecordingTransport<LocalTransport>> {
        PharmacySession::new(site, today, vec![self.coupon_vk], self.badge_vk, &self.transport)
            .with_registry_view(self.registry.clone())
    }

    fn arg(step: &Step, i: usize) -> Result<&str, String> {
        step.args.get(i).map(String::as_str).ok_or_else(|| "MissingArgument".to_owned())
    }

    fn step(&mut self, step: &Step) -> Outcome {
        match (step.role.as_str(), step.action.as_str()) {
            ("issuer", "batch") => {
                let n: u64 = Self::arg(step, 0)?.parse().map_err(|_| "BadCount")?;
                let batch = issue_coupon_batch(&self.coupon_key, &self.registry, n, Self::arg(step, 1)?, Self::arg(step, 2)?)
                    .map_err(|e| format!("{e:?}"))?;
                self.distributors.push(Distributor::new(batch));
                Ok(format!("coupons={n}"))
            }
            ("user", "init") => {
                let name = Self::arg(step, 0)?.to_owned();
                let variant = match Self::arg(step, 1)? {
                    "paper" => Variant::PaperCard,
                    "app" => Variant::App,
                    _ => return Err("UnknownVariant".into()),
                };
                let pii = self.pii_for(&name);
                self.users.insert(
                    name,
                    User {
                        variant,
                        wallet: (variant == Variant::PaperCard).then(|| WalletState::new_paper(None)),
                        pii,
                    },
                );
                Ok(String::new())
            }
            ("distributor", "give") => {
                let name = Self::arg(step, 0)?.to_owned();
                if !self.users.contains_key(&name) {
                    return Err("UnknownUser".into());
                }
                let record = EligibilityRecord {
                    subject_ref: name.clone(),
                    zip_code: Self::arg(step, 1)?.to_owned(),
                    job_type: Self::arg(step, 2)?.to_owned(),
                    approved: true,
                };
                let mut last = Err("NoBatch".to_owned());
                for d in &mut self.distributors {
                    last = d.distribute(&record).map_err(|e| format!("{e:?}"));
                    if last.is_ok() {
                        break;
                    }
                }
                let coupon = last?;
                let index = coupon.payload.index;
                self.give(&name, coupon)?;
                Ok(format!("index={index}"))
            }
            ("user", "share") => {
                let from = Self::arg(step, 0)?;
                let to = Self::arg(step, 1)?.to_owned();
                let coupon = self.coupon_of(from).ok_or("NoCoupon")?;
                if !self.users.contains_key(&to) {
                    return Err("UnknownUser".into());
                }
                self.give(&to, coupon)?;
                Ok(String::new())
            }
            ("pharmacy", "dose1") => self.dose(step, 1),
            ("pharmacy", "dose2") => self.dose(step, 2),
            ("venue", "verify") => self.venue_verify(step),
            ("venue", "group") => self.group(step),
            ("user", "report") => self.report(step),
            ("health", "aggregate") => self.aggregate(step),
            _ => Err("UnknownAction".into()),
        }
    }

    fn coupon_of(&self, name: &str) -> Option<Coupon> {
        let u = self.users.get(name)?;
        u.wallet.as_ref().and_then(|w| w.coupon().cloned())
    }

    fn give(&mut self, name: &str, coupon: Coupon) -> Result<(), String> {
        let u = self.users.get_mut(name).ok_or("UnknownUser")?;
        match u.variant {
            Variant::PaperCard => u
                .wallet
                .as_mut()
                .expect("paper wallet exists")
                .set_coupon(coupon)
                .map_err(|e| format!("{e:?}")),
            Variant::App => {
                if u.wallet.is_some() {
                    return Err("AlreadyHasCoupon".into());
                }
                let w = wallet_init_app_with(coupon, &u.pii, &mut self.rng).map_err(|e| format!("{e:?}"))?;
                u.wallet = Some(w);
                Ok(())
            }
        }
    }

    fn dose(&mut self, step: &Step, number: u8) -> Outcome {
        let name = Self::arg(step, 0)?;
        let site = Self::arg(step, 1)?;
        let product = Self::arg(step, 2)?;
        let lot = Self::arg(step, 3)?;
        let today = self.date(step.at);
        let dose = DoseInfo::new(product, lot, today, number, site);
        let mut rng = ChaCha20Rng::from_rng(&mut self.rng).expect("rng");
        let user = self.users.get(name).ok_or("UnknownUser")?;
        let wallet = user.wallet.as_ref().ok_or("NoCoupon")?;
        let mut pharmacy = self.pharmacy(site, today);
        let issued = if number == 1 {
            let coupon = wallet.coupon().ok_or("NoCoupon")?.clone();
            if let AdmitDecision::Reject(r) = pharmacy.admit(&coupon) {
                return Err(format!("{r:?}"));
            }
            match user.variant {
                Variant::PaperCard => {
                    let pii = user.pii.clone();
                    pharmacy.issue_credentials_paper(&coupon, dose, pii, &mut rng)
                }
                Variant::App => pharmacy.issue_credentials_app(
                    &coupon,
                    dose,
                    wallet.pii_root().expect("app wallet"),
                    wallet.public_key().expect("app wallet"),
                ),
            }
        } else {
            let badge = wallet.badge().ok_or("NoDose1")?.clone();
            let status = wallet.status().ok_or("NoDose1")?.clone();
            pharmacy.second_dose(&badge, &status, dose)
        };
        let issued = issued.map_err(|e| match e {
            IssueError::NotAdmitted(r) => format!("{r:?}"),
            IssueError::Rejected(r) => format!("{r:?}"),
            other => format!("{other:?}"),
        })?;
        let level = issued.status.payload.level;
        let user = self.users.get_mut(name).expect("checked");
        user.wallet
            .as_mut()
            .expect("checked")
            .store(issued)
            .map_err(|e| format!("{e:?}"))?;
        Ok(format!("level={level}"))
    }

    fn venue_verify(&mut self, step: &Step) -> Outcome {
        let name = Self::arg(step, 0)?;
        let venue = Self::arg(step, 1)?;
        let kind = PresentationKind::parse(Self::arg(step, 2)?).ok_or("UnknownPresentation")?;
        let labels: Vec<&str> = step.args[3..].iter().map(String::as_str).collect();
        let wallet = self
            .users
            .get(name)
            .and_then(|u| u.wallet.as_ref())
            .ok_or("NoWallet")?;
        let consent = match kind {
            PresentationKind::StatusWithPasskey => Consent::labels(&["passkey"]),
            _ => Consent::labels(&labels),
        };
        let p = wallet.present(kind, &consent).map_err(|e| format!("{e:?}"))?;
        self.log.venue_transcripts.push(VenueTranscript::new(venue, &p));
        let verdict = verify_presentation(&[self.badge_vk], &p, &labels).map_err(|e| format!("{e:?}"))?;
        Ok(format!("level={} disclosed={}", verdict.level, verdict.disclosed.len()))
    }

    fn group(&mut self, step: &Step) -> Outcome {
        let name = Self::arg(step, 0)?;
        let wallet = self
            .users
            .get(name)
            .and_then(|u| u.wallet.as_ref())
            .ok_or("NoWallet")?;
        let status = wallet.status().ok_or("NoStatus")?.clone();
        let mut session = ChannelSession::new();
        let identity = self.venue.identity().clone();
        session
            .establish(&identity, &self.venue_mode, &mut self.rng)
            .map_err(|e| format!("{e:?}"))?;
        session
            .submit_status(&status, &mut self.rng)
            .map_err(|e| format!("{e:?}"))?;
        let resp = self
            .venue
            .process_status(&mut session, step.at, &mut self.rng)
            .map_err(|e| format!("{e:?}"))?;
        let ct = match resp {
            VenueResponse::Challenge(ct) => ct,
            VenueResponse::Reject(r) => return Err(format!("{r:?}")),
        };
        let k = crate::group::user_reveal(wallet, &ct).map_err(|e| format!("{e:?}"))?;
        if !self.venue.guard_check(&k, step.at) {
            return Err("GuardRejected".into());
        }
        Ok(format!("k={k}"))
    }

    fn report(&mut self, step: &Step) -> Outcome {
        let name = Self::arg(step, 0)?;
        let codes: Vec<&str> = Self::arg(step, 1)?.split(',').collect();
        let anon = step.args.get(2).is_some_and(|a| a == "anon");
        let vector = SymptomVector::from_codes(&codes).map_err(|_| "UnknownSymptom")?;
        let wallet = self
            .users
            .get(name)
            .and_then(|u| u.wallet.as_ref())
            .ok_or("NoWallet")?;
        let badge = wallet.badge().ok_or("NoDose1")?;
        let report = SymptomReport {
            vector: vector.clone(),
            coupon_id: (!anon).then(|| badge.info.coupon_id()),
            dose_ref: Some(DoseRef::from(badge.info.latest_dose())),
            timestamp: step.at,
        };
        if let UploadDecision::Rejected(r) = upload_report(&self.registry, &self.store, report) {
            return Err(format!("{r:?}"));
        }
        let bundle = split_shares_with(&vector, &self.params, &mut self.rng).map_err(|e| format!("{e:?}"))?;
        let mut nonce = [0u8; 16];
        self.rng.fill_bytes(&mut nonce);
        let (sa, sb) = bundle.submissions(nonce, self.params.p);
        self.server_a.accept(&sa).map_err(|e| format!("{e:?}"))?;
        self.server_b.accept(&sb).map_err(|e| format!("{e:?}"))?;
        for (s, v) in self.plain_sum.iter_mut().zip(vector.counts()) {
            *s += *v as i64;
        }
        self.plain_n += 1;
        Ok(if anon { "path=anonymous".into() } else { "path=coupon".into() })
    }

    fn aggregate(&mut self, step: &Step) -> Outcome {
        let agg = combine_aggregates(&self.server_a.aggregate(), &self.server_b.aggregate(), &self.params)
            .map_err(|e| format!("{e:?}"))?;
        if agg.totals != self.plain_sum || agg.n_reports != self.plain_n {
            self.log
                .violations
                .push(format!("aggregate {:?} differs from plaintext {:?}", agg.totals, self.plain_sum));
        }
        let out = match step.args.first() {
            Some(eps) => {
                let eps: f64 = eps.parse().map_err(|_| "BadEpsilon")?;
                add_dp_noise(&agg, eps, 1.0, &mut self.rng).map_err(|e| format!("{e:?}"))?
            }
            None => agg,
        };
        let totals: Vec<String> = out.totals.iter().map(i64::to_string).collect();
        Ok(format!("n={} totals={}", out.n_reports, totals.join(",")))
    }

    fn final_checks(&mut self) {
        match Registry::replay(&self.registry.log()) {
            Ok(r) if r.snapshot() == self.registry.snapshot() => {}
            _ => self.log.violations.push("registry log replay diverges from live state".into()),
        }
        for (name, u) in &self.users {
            if let Some(w) = &u.wallet {
                if let Err(e) = w.check_invariants() {
                    self.log.violations.push(format!("wallet {name}: {e}"));
                }
            }
        }
        let messages = self.transport.messages();
        for v in &self.log.pii_values {
            if messages
                .iter()
                .any(|m| m.windows(v.len()).any(|w| w == v.as_bytes()))
            {
                self.log.violations.push(format!("issuer saw PII value `{v}`"));
            }
        }
        self.log.issuer_messages = messages;
    }
}

/// Runs `script` deterministically under `seed`.
pub fn run_scenario(script: &ScenarioScript, seed: u64) -> TranscriptLog {
    let mut run = Run::new(seed);
    for step in &script.steps {
        let line = match run.step(step) {
            Ok(detail) => {
                run.log.accepted += 1;
                if detail.is_empty() {
                    format!("{step} -> OK")
                } else {
                    format!("{step} -> OK {detail}")
                }
            }
            Err(reason) => {
                run.log.rejected += 1;
                format!("{step} -> REJECT {reason}")
            }
        };
        run.log.lines.push(line);
    }
    run.final_checks();
    let summary = format!(
        "summary actions={} accepted={} rejected={} violations={}",
        script.steps.len(),
        run.log.accepted,
        run.log.rejected,
        run.log.violations.len()
    );
    run.log.lines.extend(run.log.violations.iter().map(|v| format!("violation {v}")));
    run.log.lines.push(summary);
    run.log
}

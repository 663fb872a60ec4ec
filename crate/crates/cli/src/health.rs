use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use clap::Subcommand;
use rand::rngs::OsRng;
use rand::RngCore;
use serde_json::json;
use vaxcred_core::canonical::Canonical;
use vaxcred_core::health::{
    add_dp_noise, combine_aggregates, match_alerts, publish_alert_feed, split_shares, symptom_codes, upload_report,
    AggregateResult, AggregationServer, AlertFeed, AlertScope, DoseRef, FeedRequest, ReportStore, ShareSubmission,
    SymptomReport, UploadDecision,
};
use vaxcred_core::wire::frame::{frame, read_frame};
use vaxcred_core::{FieldParams, Registry, SymptomVector};

use crate::config::Settings;
use crate::store::{date_or_today, load_wallet, reject};

#[derive(Subcommand)]
pub enum HealthCmd {
    /// Upload a symptom report, tied to the coupon or anonymous.
    Report {
        #[arg(long)]
        wallet: PathBuf,
        /// Symptom codes (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        codes: Vec<String>,
        /// Omit the coupon; only the dose reference is kept.
        #[arg(long)]
        anonymous: bool,
        /// Report store, one JSON record per line.
        #[arg(long)]
        store: PathBuf,
    },
    /// Split a symptom vector into one share per aggregation server.
    Split {
        #[arg(long, value_delimiter = ',', required = true)]
        codes: Vec<String>,
        /// Share file for server A; submissions are appended.
        #[arg(long)]
        server_a: PathBuf,
        #[arg(long)]
        server_b: PathBuf,
    },
    /// Sum each server's shares and combine the two aggregates.
    Aggregate {
        #[arg(long)]
        server_a: PathBuf,
        #[arg(long)]
        server_b: PathBuf,
    },
    /// Release aggregate totals with Laplace noise.
    Noise {
        /// JSON written by `health aggregate`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        sensitivity: f64,
    },
    /// Publish the day's alert feed.
    Feed {
        #[arg(long)]
        day: NaiveDate,
        /// Alert as scope:key:message, scope one of product, lot, site, condition.
        #[arg(long = "alert")]
        alerts: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match a downloaded feed against the wallet, locally.
    Match {
        #[arg(long)]
        feed: PathBuf,
        #[arg(long)]
        wallet: PathBuf,
        /// Health-condition codes held by the user.
        #[arg(long = "condition")]
        conditions: Vec<String>,
    },
}

fn vector(codes: &[String]) -> Result<SymptomVector> {
    SymptomVector::from_codes(codes).map_err(|e| anyhow!(e))
}

fn append(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn server_from_file(params: FieldParams, path: &Path) -> Result<AggregationServer> {
    let server = AggregationServer::new(params)?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cursor = bytes.as_slice();
    while !cursor.is_empty() {
        let body = read_frame(&mut cursor).context("truncated share file")?;
        let sub = ShareSubmission::from_canonical_bytes(&body).context("bad share submission")?;
        server.accept(&sub).or_else(reject)?;
    }
    Ok(server)
}

fn aggregate_json(r: &AggregateResult) -> serde_json::Value {
    let codes = symptom_codes();
    let totals: serde_json::Map<_, _> = codes.iter().zip(&r.totals).map(|(c, t)| (c.to_string(), json!(t))).collect();
    json!({
        "n_reports": r.n_reports,
        "epsilon": r.epsilon,
        "noised": r.noised,
        "totals": totals,
    })
}

fn parse_aggregate(v: &serde_json::Value) -> Result<AggregateResult> {
    let totals = v["totals"].as_object().context("missing totals")?;
    let totals = symptom_codes()
        .iter()
        .map(|c| totals.get(*c).and_then(|t| t.as_i64()).with_context(|| format!("missing total for {c}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(AggregateResult {
        totals,
        n_reports: v["n_reports"].as_u64().context("missing n_reports")?,
        epsilon: v["epsilon"].as_f64(),
        noised: v["noised"].as_bool().unwrap_or(false),
    })
}

fn parse_alert(s: &str) -> Result<(AlertScope, String, String)> {
    let mut parts = s.splitn(3, ':');
    let (Some(scope), Some(key), Some(msg)) = (parts.next(), parts.next(), parts.next()) else {
        bail!("alert `{s}` is not scope:key:message");
    };
    let scope = AlertScope::parse(scope).with_context(|| format!("unknown alert scope `{scope}`"))?;
    Ok((scope, key.to_owned(), msg.to_owned()))
}

pub fn run(settings: &Settings, cmd: HealthCmd) -> Result<()> {
    let params = FieldParams::with_dim(symptom_codes().len());
    match cmd {
        HealthCmd::Report {
            wallet,
            codes,
            anonymous,
            store,
        } => {
            let w = load_wallet(settings, &wallet)?;
            let coupon = w.coupon().context("wallet holds no coupon")?;
            let registry = Registry::open(&settings.registry).context("opening registry")?;
            let reports = ReportStore::new(params.dim);
            let report = SymptomReport {
                vector: vector(&codes)?,
                coupon_id: (!anonymous).then(|| coupon.id()),
                dose_ref: w.badge().map(|b| DoseRef::from(b.info.latest_dose())),
                timestamp: chrono::Utc::now().timestamp().max(0) as u64,
            };
            match upload_report(&registry, &reports, report) {
                UploadDecision::Accepted => {
                    append(&store, reports.export_json_lines().as_bytes())?;
                    println!("accepted ({})", if anonymous { "anonymous" } else { "coupon-bound" });
                }
                UploadDecision::Rejected(r) => return reject(format!("{r:?}")),
            }
        }
        HealthCmd::Split {
            codes,
            server_a,
            server_b,
        } => {
            let bundle = split_shares(&vector(&codes)?, &params)?;
            let mut nonce = [0u8; 16];
            OsRng.fill_bytes(&mut nonce);
            let (a, b) = bundle.submissions(nonce, params.p);
            append(&server_a, &frame(&a.canonical_bytes()))?;
            append(&server_b, &frame(&b.canonical_bytes()))?;
            println!("shares appended for {} codes", codes.len());
        }
        HealthCmd::Aggregate { server_a, server_b } => {
            let a = server_from_file(params, &server_a)?;
            let b = server_from_file(params, &server_b)?;
            let result = combine_aggregates(&a.aggregate(), &b.aggregate(), &params).or_else(reject)?;
            println!("{}", aggregate_json(&result));
        }
        HealthCmd::Noise {
            input,
            epsilon,
            sensitivity,
        } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let agg = parse_aggregate(&serde_json::from_str(&text)?)?;
            let noised = add_dp_noise(&agg, epsilon, sensitivity, &mut OsRng).or_else(reject)?;
            println!("{}", aggregate_json(&noised));
        }
        HealthCmd::Feed { day, alerts, out } => {
            let entries = alerts.iter().map(|a| parse_alert(a)).collect::<Result<Vec<_>>>()?;
            let feed = publish_alert_feed(day, entries);
            fs::write(&out, feed.to_lines())?;
            println!("{} alerts for {day}", feed.entries.len());
        }
        HealthCmd::Match {
            feed,
            wallet,
            conditions,
        } => {
            let w = load_wallet(settings, &wallet)?;
            let text = fs::read_to_string(&feed).with_context(|| format!("reading {}", feed.display()))?;
            let day = date_or_today(None);
            let feed = AlertFeed::from_lines(day, &text)?;
            let day = feed.entries.first().map_or(day, |e| e.day);
            // What the client would have sent to fetch this feed.
            let request = FeedRequest { day }.canonical_bytes();
            println!("request {}", hex::encode(request));
            let doses = w.badge().map(|b| b.info.dose_history.clone()).unwrap_or_default();
            let result = match_alerts(&feed, &doses, &conditions);
            if result.is_empty() {
                println!("no matching alerts");
            }
            for e in &result.matches {
                println!("match {} {}: {}", e.scope, e.key, e.message);
            }
        }
    }
    Ok(())
}

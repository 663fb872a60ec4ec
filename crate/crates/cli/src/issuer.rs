use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Subcommand;
use rand::rngs::OsRng;
use vaxcred_core::coupon::{export_coupon_url, issue_coupon_range, CouponPayload, EligibilityRecord, JobType, ZipCode};
use vaxcred_core::crypto::generate_keypair_with;
use vaxcred_core::registry::RegistryError;
use vaxcred_core::vaccination::{serve, BadgeIssuer};
use vaxcred_core::wire::qr::{decode_qr_unverified, encode_qr};
use vaxcred_core::{Coupon, Registry};

use crate::config::Settings;
use crate::store::{load_public_key, load_signing_key, reject, write_keypair};

#[derive(Subcommand)]
pub enum IssuerCmd {
    /// Generate a signing key pair in the key store.
    Keygen {
        #[arg(long, default_value = "issuer")]
        name: String,
        #[arg(long)]
        force: bool,
    },
    /// Sign a batch of coupons for one zip code and job type.
    IssueBatch {
        #[arg(long)]
        count: u64,
        #[arg(long)]
        zip: String,
        #[arg(long)]
        job: String,
        /// Write coupon QR text here, one per line, instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "issuer")]
        key: String,
    },
    /// Answer badge/status signing requests over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7411")]
        addr: String,
        /// Stop after this many connections.
        #[arg(long)]
        max_requests: Option<usize>,
        /// Key whose coupons are honoured.
        #[arg(long, default_value = "issuer")]
        key: String,
        /// Key that signs badges and statuses; defaults to `--key`.
        #[arg(long)]
        badge_key: Option<String>,
    },
}

#[derive(Subcommand)]
pub enum DistributorCmd {
    /// Hand one coupon from a batch file to an approved subject.
    Give {
        #[arg(long)]
        batch: PathBuf,
        /// Opaque reference to the eligibility decision.
        #[arg(long)]
        subject: String,
        #[arg(long)]
        zip: String,
        #[arg(long)]
        job: String,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        approved: bool,
        /// Indices already handed out; read and updated.
        #[arg(long)]
        state: Option<PathBuf>,
    },
}

/// Lowest index for `(zip, job)` not yet seeded in the registry.
fn next_free_index(registry: &Registry, zip: &str, job: &str) -> Result<u64> {
    let zip_code = ZipCode::parse(zip).or_else(reject)?;
    let job_type = JobType::parse(job).or_else(reject)?;
    let mut index = 0;
    loop {
        let id = CouponPayload {
            index,
            zip_code: zip_code.clone(),
            job_type: job_type.clone(),
        }
        .id();
        match registry.check(&id) {
            Err(RegistryError::UnknownCoupon) => return Ok(index),
            Err(RegistryError::Dismantled) => return reject("registry dismantled"),
            _ => index += 1,
        }
    }
}

pub fn run_issuer(settings: &Settings, cmd: IssuerCmd) -> Result<()> {
    match cmd {
        IssuerCmd::Keygen { name, force } => {
            let (key, vk) = generate_keypair_with(&mut OsRng)?;
            let path = write_keypair(settings, &name, &key, force)?;
            println!("wrote {}", path.display());
            println!("public {}", vk.to_hex());
        }
        IssuerCmd::IssueBatch {
            count,
            zip,
            job,
            out,
            key,
        } => {
            let key = load_signing_key(settings, &key)?;
            let registry = Registry::open(&settings.registry).context("opening registry")?;
            let start = next_free_index(&registry, &zip, &job)?;
            let batch = issue_coupon_range(&key, &registry, start, count, &zip, &job).or_else(reject)?;
            let text: String = batch.iter().map(|c| encode_qr(c) + "\n").collect();
            match out {
                Some(path) => {
                    fs::write(&path, text)?;
                    println!(
                        "issued {count} coupons (indices {start}..{}) to {}",
                        start + count,
                        path.display()
                    );
                }
                None => print!("{text}"),
            }
        }
        IssuerCmd::Serve {
            addr,
            max_requests,
            key,
            badge_key,
        } => {
            let coupon_vk = load_public_key(settings, &key, None)?;
            let signer = load_signing_key(settings, badge_key.as_deref().unwrap_or(&key))?;
            let registry = Arc::new(Registry::open(&settings.registry).context("opening registry")?);
            let issuer = Arc::new(BadgeIssuer::new(signer, vec![coupon_vk], registry));
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            println!("listening on {}", listener.local_addr()?);
            std::io::stdout().flush()?;
            serve(listener, issuer, max_requests)?;
        }
    }
    Ok(())
}

pub fn run_distributor(_settings: &Settings, cmd: DistributorCmd) -> Result<()> {
    let DistributorCmd::Give {
        batch,
        subject,
        zip,
        job,
        approved,
        state,
    } = cmd;
    let coupons = fs::read_to_string(&batch)
        .with_context(|| format!("reading batch {}", batch.display()))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| decode_qr_unverified::<Coupon>(l.trim()))
        .collect::<Result<Vec<_>, _>>()
        .context("batch file")?;
    let released: BTreeSet<u64> = match &state {
        Some(p) if p.exists() => fs::read_to_string(p)?
            .lines()
            .filter_map(|l| l.trim().parse().ok())
            .collect(),
        _ => BTreeSet::new(),
    };
    let mut distributor = vaxcred_core::coupon::Distributor::with_released(coupons, released);
    let coupon = distributor
        .distribute(&EligibilityRecord {
            subject_ref: subject,
            zip_code: zip,
            job_type: job,
            approved,
        })
        .or_else(reject)?;
    if let Some(p) = &state {
        let text: String = distributor.released().map(|i| format!("{i}\n")).collect();
        fs::write(p, text)?;
    }
    println!("{}", encode_qr(&coupon));
    println!("{}", export_coupon_url(&coupon));
    Ok(())
}

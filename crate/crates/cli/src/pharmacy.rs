use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Args, Subcommand};
use rand::rngs::OsRng;
use vaxcred_core::crypto::VerifyingKey;
use vaxcred_core::vaccination::{
    pharmacy_admit, AdmitDecision, BadgeIssuer, IssueError, Issued, LocalTransport, PharmacySession,
    SigningTransport, TcpTransport, TransportError,
};
use vaxcred_core::{DoseInfo, Registry, WalletState};

use crate::config::Settings;
use crate::store::{
    date_or_today, inline_or_file, load_public_key, load_signing_key, load_wallet, parse_coupon, parse_pii,
    reject, save_wallet,
};

#[derive(Args)]
pub struct SiteArgs {
    #[arg(long)]
    site: String,
    /// Dose date; defaults to today.
    #[arg(long)]
    date: Option<NaiveDate>,
    /// Issuer key name in the key store.
    #[arg(long, default_value = "issuer")]
    key: String,
    /// Signing service address. Without it the issuer key is used in-process.
    #[arg(long)]
    issuer_addr: Option<String>,
}

#[derive(Args)]
pub struct DoseArgs {
    #[arg(long)]
    product: String,
    #[arg(long)]
    lot: String,
}

#[derive(Subcommand)]
pub enum PharmacyCmd {
    /// Check a coupon before vaccinating.
    Admit {
        /// Coupon QR text, coupon URL, or @file.
        #[arg(long)]
        coupon: String,
        #[arg(long, default_value = "issuer")]
        key: String,
    },
    /// First dose: obtain a badge and status for the wallet's coupon.
    Vaccinate {
        #[arg(long)]
        wallet: PathBuf,
        #[command(flatten)]
        site: SiteArgs,
        #[command(flatten)]
        dose: DoseArgs,
        /// Holder PII as label=value (paper card only).
        #[arg(long = "pii")]
        pii: Vec<String>,
        /// Keep the PII record after issuance instead of deleting it.
        #[arg(long)]
        retain_pii: bool,
    },
    /// Second dose: extend the badge and upgrade the status.
    SecondDose {
        #[arg(long)]
        wallet: PathBuf,
        #[command(flatten)]
        site: SiteArgs,
        #[command(flatten)]
        dose: DoseArgs,
    },
}

enum Transport {
    Local(LocalTransport),
    Tcp(TcpTransport),
}

impl SigningTransport for Transport {
    fn round_trip(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        match self {
            Transport::Local(t) => t.round_trip(request),
            Transport::Tcp(t) => t.round_trip(request),
        }
    }
}

fn session(settings: &Settings, site: &SiteArgs) -> Result<PharmacySession<Transport>> {
    let vk = load_public_key(settings, &site.key, None)?;
    let registry = Arc::new(Registry::open(&settings.registry).context("opening registry")?);
    let addr = site.issuer_addr.clone().or_else(|| settings.issuer_addr.clone());
    let transport = match addr {
        Some(addr) => Transport::Tcp(TcpTransport::new(addr)),
        None => {
            let key = load_signing_key(settings, &site.key)?;
            Transport::Local(LocalTransport::new(Arc::new(BadgeIssuer::new(key, vec![vk], registry.clone()))))
        }
    };
    Ok(PharmacySession::new(&site.site, date_or_today(site.date), vec![vk], vk, transport).with_registry_view(registry))
}

fn issue_failed(e: IssueError) -> Result<Issued> {
    match e {
        IssueError::Transport(t) => Err(anyhow::anyhow!("signing service: {t}")),
        other => reject(other),
    }
}

fn report(issued: &Issued) {
    println!("level {}", issued.status.payload.level);
    println!("coupon {}", issued.badge.info.coupon_id().to_hex());
    println!("doses {}", issued.badge.info.dose_history.len());
}

fn admit_check(coupon_vk: &VerifyingKey, registry: &Registry, text: &str) -> Result<()> {
    let coupon = parse_coupon(text, Some(coupon_vk))?;
    match pharmacy_admit(&[*coupon_vk], registry, &coupon) {
        AdmitDecision::Admit => {
            println!("admit {}", coupon.id().to_hex());
            Ok(())
        }
        AdmitDecision::Reject(r) => reject(format!("{r:?}")),
    }
}

pub fn run(settings: &Settings, cmd: PharmacyCmd) -> Result<()> {
    match cmd {
        PharmacyCmd::Admit { coupon, key } => {
            let vk = load_public_key(settings, &key, None)?;
            let registry = Registry::open(&settings.registry).context("opening registry")?;
            admit_check(&vk, &registry, &inline_or_file(&coupon)?)
        }
        PharmacyCmd::Vaccinate {
            wallet,
            site,
            dose,
            pii,
            retain_pii,
        } => {
            let mut w = load_wallet(settings, &wallet)?;
            let coupon = w.coupon().cloned().context("wallet holds no coupon")?;
            let mut s = session(settings, &site)?.retain_pii(retain_pii);
            let dose = DoseInfo::new(&dose.product, &dose.lot, s.today(), 1, &site.site);
            let issued = match &w {
                WalletState::PaperCard(_) => {
                    let pii = parse_pii(&pii)?;
                    s.issue_credentials_paper(&coupon, dose, pii, &mut OsRng)
                }
                WalletState::App(_) => {
                    if !pii.is_empty() {
                        anyhow::bail!("app wallets keep their own PII; drop --pii");
                    }
                    let root = w.pii_root().context("wallet has no PII tree")?;
                    let pk = w.public_key().context("wallet has no key")?;
                    s.issue_credentials_app(&coupon, dose, root, pk)
                }
            }
            .or_else(issue_failed)?;
            w.store(issued.clone()).or_else(reject)?;
            save_wallet(settings, &wallet, &w)?;
            report(&issued);
            Ok(())
        }
        PharmacyCmd::SecondDose { wallet, site, dose } => {
            let mut w = load_wallet(settings, &wallet)?;
            let badge = w.badge().cloned().context("wallet holds no badge")?;
            let status = w.status().cloned().context("wallet holds no status")?;
            let mut s = session(settings, &site)?;
            let dose = DoseInfo::new(&dose.product, &dose.lot, s.today(), 2, &site.site);
            let issued = s.second_dose(&badge, &status, dose).or_else(issue_failed)?;
            w.store(issued.clone()).or_else(reject)?;
            save_wallet(settings, &wallet, &w)?;
            report(&issued);
            Ok(())
        }
    }
}

use std::path::PathBuf;

use anyhow::{bail, Result};
use chrono::NaiveDate;
use clap::{Subcommand, ValueEnum};
use vaxcred_core::wallet::{wallet_init_app, Consent, PresentationKind, DEFAULT_SECOND_DOSE_INTERVAL_DAYS};
use vaxcred_core::wire::qr::encode_qr;
use vaxcred_core::WalletState;

use crate::config::Settings;
use crate::store::{date_or_today, inline_or_file, load_public_key, load_wallet, parse_coupon, parse_pii, reject, save_wallet};

#[derive(Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Paper,
    App,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum KindArg {
    Badge,
    Status,
    Passkey,
    Disclosure,
}

impl KindArg {
    fn kind(self) -> PresentationKind {
        match self {
            KindArg::Badge => PresentationKind::BadgeOnly,
            KindArg::Status => PresentationKind::StatusOnly,
            KindArg::Passkey => PresentationKind::StatusWithPasskey,
            KindArg::Disclosure => PresentationKind::StatusWithDisclosure,
        }
    }
}

#[derive(Subcommand)]
pub enum UserCmd {
    /// Create a wallet around a received coupon.
    Init {
        #[arg(long, value_enum)]
        variant: VariantArg,
        /// Coupon QR text, coupon URL, or @file.
        #[arg(long)]
        coupon: String,
        #[arg(long)]
        wallet: PathBuf,
        /// PII as label=value (app wallets only; paper cards give PII at the pharmacy).
        #[arg(long = "pii")]
        pii: Vec<String>,
        #[arg(long)]
        force: bool,
    },
    /// Summarise the wallet, optionally printing every credential as QR text.
    Show {
        #[arg(long)]
        wallet: PathBuf,
        #[arg(long)]
        qr: bool,
    },
    /// Build a presentation for a verifier.
    Disclose {
        #[arg(long)]
        wallet: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Consent to reveal these PII labels (comma separated).
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        /// Consent to hand over the passkey.
        #[arg(long)]
        consent: bool,
    },
    /// Whether the second dose is due.
    Due {
        #[arg(long)]
        wallet: PathBuf,
        #[arg(long)]
        today: Option<NaiveDate>,
        #[arg(long, default_value_t = DEFAULT_SECOND_DOSE_INTERVAL_DAYS)]
        interval: i64,
    },
}

pub fn run(settings: &Settings, cmd: UserCmd) -> Result<()> {
    match cmd {
        UserCmd::Init {
            variant,
            coupon,
            wallet,
            pii,
            force,
        } => {
            if wallet.exists() && !force {
                bail!("{} already exists (use --force to replace it)", wallet.display());
            }
            let issuer = load_public_key(settings, "issuer", None).ok();
            let coupon = parse_coupon(&inline_or_file(&coupon)?, issuer.as_ref())?;
            let w = match variant {
                VariantArg::Paper => {
                    if !pii.is_empty() {
                        bail!("paper cards receive PII at the pharmacy; drop --pii");
                    }
                    WalletState::new_paper(Some(coupon))
                }
                VariantArg::App => {
                    let pii = parse_pii(&pii)?;
                    if pii.is_empty() {
                        bail!("app wallets need at least one --pii label=value");
                    }
                    wallet_init_app(coupon, &pii)?
                }
            };
            save_wallet(settings, &wallet, &w)?;
            println!("wallet {} ({:?})", wallet.display(), w.variant());
        }
        UserCmd::Show { wallet, qr } => {
            let w = load_wallet(settings, &wallet)?;
            println!("variant {:?}", w.variant());
            if let Some(c) = w.coupon() {
                println!("coupon {}", c.id().to_hex());
            }
            match w.status() {
                Some(s) => println!("level {}", s.payload.level),
                None => println!("level not-vaccinated"),
            }
            if let Some(b) = w.badge() {
                for d in &b.info.dose_history {
                    println!("dose {} {} {} lot={} site={}", d.dose_number, d.date, d.product, d.lot, d.site_id);
                }
            }
            if let Some(pk) = w.public_key() {
                println!("public {}", pk.to_hex());
            }
            if let Some(tree) = w.pii_tree() {
                println!("labels {}", tree.labels().collect::<Vec<_>>().join(","));
            }
            if qr {
                if let Some(c) = w.coupon() {
                    println!("{}", encode_qr(c));
                }
                if let Some(b) = w.badge() {
                    println!("{}", encode_qr(b));
                }
                if let Some(s) = w.status() {
                    println!("{}", encode_qr(s));
                }
                if let Some(p) = w.passkey() {
                    println!("{}", encode_qr(p));
                }
            }
        }
        UserCmd::Disclose {
            wallet,
            kind,
            labels,
            consent,
        } => {
            let w = load_wallet(settings, &wallet)?;
            let consent = if consent || !labels.is_empty() {
                Consent::labels(&labels)
            } else {
                Consent::Denied
            };
            let p = w.present(kind.kind(), &consent).or_else(reject)?;
            println!("{}", encode_qr(&p));
        }
        UserCmd::Due {
            wallet,
            today,
            interval,
        } => {
            let w = load_wallet(settings, &wallet)?;
            let today = date_or_today(today);
            match w.second_dose_due(today, interval) {
                Ok((true, days)) => println!("due ({days} days since dose 1)"),
                Ok((false, days)) => println!("not due ({days} of {interval} days since dose 1)"),
                Err(e) => println!("n/a: {e}"),
            }
        }
    }
    Ok(())
}

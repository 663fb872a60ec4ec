use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Subcommand, ValueEnum};
use rand::rngs::OsRng;
use rand::RngCore;
use vaxcred_core::crypto::generate_keypair_with;
use vaxcred_core::group::{user_reveal, ChannelSession, TrustMode, VenueIdentity, VenueResponse, VenueRuntime};
use vaxcred_core::verification::{verify_badge, verify_presentation, verify_status};
use vaxcred_core::wallet::Presentation;
use vaxcred_core::wire::qr::{
    decode_qr_unverified, encode_qr, sniff_prefix, BADGE_PREFIX, PRESENTATION_PREFIX, STATUS_PREFIX,
};
use vaxcred_core::{Badge, Status, VaccinationLevel};

use crate::config::Settings;
use crate::store::{inline_or_file, load_public_key, load_signing_key, load_wallet, reject};

#[derive(Clone, Copy, ValueEnum)]
pub enum TrustArg {
    /// Venue key certified by the issuer.
    Issuer,
    /// Certificate digest pinned from a QR code at the door.
    Qr,
    /// Short verification code read off a sign.
    Code,
}

#[derive(Subcommand)]
pub enum VenueCmd {
    /// Verify one scanned credential or presentation.
    Verify {
        /// QR text (BDG1, STS1 or PRS1) or @file.
        #[arg(long)]
        scan: String,
        /// PII labels that must be disclosed (comma separated).
        #[arg(long, value_delimiter = ',')]
        require: Vec<String>,
        /// Minimum vaccination level to accept.
        #[arg(long, default_value = "dose1", value_parser = parse_level)]
        min_level: VaccinationLevel,
        #[arg(long, default_value = "issuer")]
        key: String,
        /// Badge-issuer public key in hex, instead of the key store.
        #[arg(long)]
        trust_key: Option<String>,
    },
    /// Run contactless group admission for a set of app wallets.
    Gate {
        #[arg(long = "wallet", required = true)]
        wallets: Vec<PathBuf>,
        #[arg(long, default_value = "venue")]
        venue_id: String,
        #[arg(long, value_enum, default_value = "issuer")]
        trust: TrustArg,
        /// Challenge rotation period in seconds.
        #[arg(long, default_value_t = 60)]
        period: u64,
        /// Logical time at which statuses are submitted.
        #[arg(long, default_value_t = 0)]
        at: u64,
        /// Logical time at which codes are shown to the guard; defaults to `--at`.
        #[arg(long)]
        show_at: Option<u64>,
        /// Minimum vaccination level to admit.
        #[arg(long, default_value = "fully", value_parser = parse_level)]
        min_level: VaccinationLevel,
        #[arg(long, default_value = "issuer")]
        key: String,
    },
}

fn parse_level(s: &str) -> Result<VaccinationLevel, String> {
    VaccinationLevel::parse(s).ok_or_else(|| format!("unknown level `{s}`"))
}

pub fn run(settings: &Settings, cmd: VenueCmd) -> Result<()> {
    match cmd {
        VenueCmd::Verify {
            scan,
            require,
            min_level,
            key,
            trust_key,
        } => {
            let keys = [load_public_key(settings, &key, trust_key.as_deref())?];
            let text = inline_or_file(&scan)?;
            let (level, disclosed) = match sniff_prefix(&text) {
                Some(PRESENTATION_PREFIX) => {
                    let p: Presentation = decode_qr_unverified(&text).or_else(reject)?;
                    let v = verify_presentation(&keys, &p, &require).or_else(reject)?;
                    (v.level, v.disclosed)
                }
                Some(BADGE_PREFIX) if require.is_empty() => {
                    let b: Badge = decode_qr_unverified(&text).or_else(reject)?;
                    (verify_badge(&keys, &b).or_else(|_| reject("signature invalid"))?.level, Default::default())
                }
                Some(STATUS_PREFIX) if require.is_empty() => {
                    let s: Status = decode_qr_unverified(&text).or_else(reject)?;
                    (verify_status(&keys, &s).or_else(|_| reject("signature invalid"))?, Default::default())
                }
                Some(BADGE_PREFIX | STATUS_PREFIX) => return reject("requested details were not disclosed"),
                Some(other) => return reject(format!("`{other}` is not a credential presentation")),
                None => return reject("unrecognised payload"),
            };
            if level < min_level {
                return reject(format!("level {level} below {min_level}"));
            }
            println!("accept level={level}");
            for (label, value) in disclosed {
                println!("  {label}={value}");
            }
            Ok(())
        }
        VenueCmd::Gate {
            wallets,
            venue_id,
            trust,
            period,
            at,
            show_at,
            min_level,
            key,
        } => {
            if period == 0 {
                bail!("--period must be positive");
            }
            let issuer_vk = load_public_key(settings, &key, None)?;
            let (channel, channel_pk) = generate_keypair_with(&mut OsRng)?;
            let identity = match trust {
                TrustArg::Issuer => VenueIdentity::issuer_signed(&load_signing_key(settings, &key)?, &venue_id, channel_pk),
                TrustArg::Qr | TrustArg::Code => VenueIdentity::self_signed(&venue_id, channel_pk),
            };
            let mode = match trust {
                TrustArg::Issuer => TrustMode::IssuerSigned(vec![issuer_vk]),
                TrustArg::Qr => TrustMode::QrPinned(identity.cert_digest()),
                TrustArg::Code => TrustMode::CodePinned(identity.short_code()),
            };
            println!("venue {} code {}", encode_qr(&identity), identity.short_code());
            let mut seed = [0u8; 32];
            OsRng.fill_bytes(&mut seed);
            let runtime = VenueRuntime::start(channel, identity.clone(), period, vec![issuer_vk], seed)?
                .with_policy(min_level);
            let show_at = show_at.unwrap_or(at);
            let mut refused = 0;
            for path in &wallets {
                let w = load_wallet(settings, path)?;
                let outcome = admit_one(&runtime, &identity, &mode, &w, at, show_at);
                match outcome {
                    Ok(()) => println!("{} admitted", path.display()),
                    Err(why) => {
                        refused += 1;
                        println!("{} refused: {why}", path.display());
                    }
                }
            }
            if refused > 0 {
                return reject(format!("{refused} of {} refused", wallets.len()));
            }
            Ok(())
        }
    }
}

fn admit_one(
    runtime: &VenueRuntime,
    identity: &VenueIdentity,
    mode: &TrustMode,
    wallet: &vaxcred_core::WalletState,
    at: u64,
    show_at: u64,
) -> Result<(), String> {
    let status = wallet.status().ok_or("wallet holds no status")?;
    let mut session = ChannelSession::new();
    session.establish(identity, mode, &mut OsRng).map_err(|e| e.to_string())?;
    session.submit_status(status, &mut OsRng).map_err(|e| e.to_string())?;
    let ct = match runtime.process_status(&mut session, at, &mut OsRng).map_err(|e| e.to_string())? {
        VenueResponse::Challenge(ct) => ct,
        VenueResponse::Reject(r) => return Err(format!("{r:?}")),
    };
    let k = user_reveal(wallet, &ct).map_err(|e| e.to_string())?;
    if runtime.guard_check(&k, show_at) {
        Ok(())
    } else {
        Err(format!("code {k} expired at the door"))
    }
}

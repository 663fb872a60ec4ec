//! Key store, wallet files and small argument parsers shared by the roles.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use rand::rngs::OsRng;
use vaxcred_core::coupon::{import_coupon_url, COUPON_URL_PREFIX};
use vaxcred_core::crypto::{SigningKeyHandle, VerifyingKey};
use vaxcred_core::wire::qr::decode_qr_unverified;
use vaxcred_core::{Coupon, WalletState};

use crate::config::Settings;

/// A typed refusal from the protocol. Exits with status 2.
#[derive(Debug)]
pub struct Rejected(pub String);

impl fmt::Display for Rejected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Rejected {}

pub fn reject<T>(why: impl fmt::Display) -> Result<T> {
    Err(Rejected(why.to_string()).into())
}

fn key_paths(settings: &Settings, name: &str) -> (PathBuf, PathBuf) {
    (
        settings.keystore.join(format!("{name}.key")),
        settings.keystore.join(format!("{name}.pub")),
    )
}

pub fn write_keypair(settings: &Settings, name: &str, key: &SigningKeyHandle, force: bool) -> Result<PathBuf> {
    let (secret, public) = key_paths(settings, name);
    if secret.exists() && !force {
        bail!("{} already exists (use --force to replace it)", secret.display());
    }
    fs::create_dir_all(&settings.keystore)
        .with_context(|| format!("creating key store {}", settings.keystore.display()))?;
    let sealed = key.export_sealed(settings.passphrase()?, &mut OsRng);
    fs::write(&secret, sealed)?;
    fs::write(&public, format!("{}\n", key.verifying_key().to_hex()))?;
    Ok(secret)
}

pub fn load_signing_key(settings: &Settings, name: &str) -> Result<SigningKeyHandle> {
    let (secret, _) = key_paths(settings, name);
    let blob = fs::read(&secret).with_context(|| format!("reading {}", secret.display()))?;
    let (key, _) = SigningKeyHandle::import_sealed(&blob, settings.passphrase()?)
        .map_err(|_| anyhow!("cannot open {}: wrong passphrase or corrupt file", secret.display()))?;
    Ok(key)
}

/// Public key from `--trust-key` hex, or `<name>.pub` in the key store.
pub fn load_public_key(settings: &Settings, name: &str, explicit: Option<&str>) -> Result<VerifyingKey> {
    let hex = match explicit {
        Some(h) => h.to_owned(),
        None => {
            let (_, public) = key_paths(settings, name);
            fs::read_to_string(&public).with_context(|| format!("reading {}", public.display()))?
        }
    };
    VerifyingKey::from_hex(hex.trim()).map_err(|e| anyhow!("bad public key: {e}"))
}

pub fn load_wallet(settings: &Settings, path: &Path) -> Result<WalletState> {
    let bytes = fs::read(path).with_context(|| format!("reading wallet {}", path.display()))?;
    WalletState::unseal(&bytes, settings.passphrase()?).map_err(|e| anyhow!("cannot open wallet: {e}"))
}

pub fn save_wallet(settings: &Settings, path: &Path, wallet: &WalletState) -> Result<()> {
    let bytes = wallet.seal(settings.passphrase()?, &mut OsRng);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).with_context(|| format!("writing wallet {}", path.display()))?;
    Ok(())
}

/// Accepts either QR text (`CPN1:...`) or the coupon URL form.
pub fn parse_coupon(text: &str, issuer: Option<&VerifyingKey>) -> Result<Coupon> {
    let text = text.trim();
    if text.starts_with(COUPON_URL_PREFIX) {
        let vk = issuer.context("a coupon URL needs the issuer public key")?;
        return import_coupon_url(text, vk).or_else(|e| reject(format!("coupon URL: {e}")));
    }
    decode_qr_unverified(text).or_else(|e| reject(format!("coupon: {e}")))
}

/// Reads a value given inline or as `@path`; from a file, the first
/// non-empty line is used.
pub fn inline_or_file(arg: &str) -> Result<String> {
    match arg.strip_prefix('@') {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {p}"))?;
            let line = text.lines().map(str::trim).find(|l| !l.is_empty());
            line.map(str::to_owned).with_context(|| format!("{p} is empty"))
        }
        None => Ok(arg.to_owned()),
    }
}

pub fn parse_pii(entries: &[String]) -> Result<Vec<(String, String)>> {
    entries
        .iter()
        .map(|e| {
            e.split_once('=')
                .map(|(l, v)| (l.trim().to_owned(), v.trim().to_owned()))
                .ok_or_else(|| anyhow!("PII entry `{e}` is not label=value"))
        })
        .collect()
}

pub fn date_or_today(d: Option<NaiveDate>) -> NaiveDate {
    d.unwrap_or_else(|| chrono::Local::now().date_naive())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pii_pairs() {
        let p = parse_pii(&["name=Ada L".into(), "dob = 1815-12-10".into()]).unwrap();
        assert_eq!(p[1], ("dob".to_owned(), "1815-12-10".to_owned()));
        assert!(parse_pii(&["nameonly".into()]).is_err());
    }

    #[test]
    fn rejection_is_typed() {
        let e = reject::<()>("coupon already used").unwrap_err();
        assert!(e.downcast_ref::<Rejected>().is_some());
    }
}

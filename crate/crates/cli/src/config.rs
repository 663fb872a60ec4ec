//! Settings resolution: command-line flag, then environment, then the
//! key=value config file, then a built-in default.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

pub const DEFAULT_KEYSTORE: &str = "vaxcred-keys";
pub const DEFAULT_REGISTRY: &str = "vaxcred-registry.log";

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key = value", i + 1);
        };
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub keystore: PathBuf,
    pub registry: PathBuf,
    passphrase: Option<String>,
    pub issuer_addr: Option<String>,
}

impl Settings {
    pub fn resolve(
        config: Option<&Path>,
        keystore: Option<PathBuf>,
        registry: Option<PathBuf>,
        passphrase: Option<String>,
    ) -> Result<Self> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_config(&text)?
            }
            None => HashMap::new(),
        };
        Ok(Settings {
            keystore: keystore
                .or_else(|| file.get("keystore").map(PathBuf::from))
                .unwrap_or_else(|| DEFAULT_KEYSTORE.into()),
            registry: registry
                .or_else(|| file.get("registry").map(PathBuf::from))
                .unwrap_or_else(|| DEFAULT_REGISTRY.into()),
            passphrase: passphrase.or_else(|| file.get("passphrase").cloned()),
            issuer_addr: file.get("issuer_addr").cloned(),
        })
    }

    pub fn passphrase(&self) -> Result<&str> {
        self.passphrase
            .as_deref()
            .context("no passphrase: pass --passphrase, set VAXCRED_PASSPHRASE, or add `passphrase =` to the config file")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let m = parse_config("# comment\nkeystore = /tmp/k\n\nregistry=/tmp/r.log\n").unwrap();
        assert_eq!(m["keystore"], "/tmp/k");
        assert_eq!(m["registry"], "/tmp/r.log");
        assert!(parse_config("just words").is_err());
    }

    #[test]
    fn flags_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("vaxcred.conf");
        std::fs::write(&cfg, "keystore = from-file\nregistry = reg.log\npassphrase = pw\n").unwrap();
        let s = Settings::resolve(Some(&cfg), Some("from-flag".into()), None, None).unwrap();
        assert_eq!(s.keystore, PathBuf::from("from-flag"));
        assert_eq!(s.registry, PathBuf::from("reg.log"));
        assert_eq!(s.passphrase().unwrap(), "pw");
        let bare = Settings::resolve(None, None, None, None).unwrap();
        assert_eq!(bare.keystore, PathBuf::from(DEFAULT_KEYSTORE));
        assert!(bare.passphrase().is_err());
    }
}

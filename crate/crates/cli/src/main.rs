//! `vaxcred`: one binary, one subcommand group per role.
//!
//! Exit status is 0 on success, 2 when the protocol refuses (a used coupon,
//! a bad signature, a failed gate check) and 1 for anything else.

mod config;
mod health;
mod issuer;
mod pharmacy;
mod sim;
mod store;
mod user;
mod venue;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Settings;
use store::Rejected;

#[derive(Parser)]
#[command(name = "vaxcred", version, about = "Privacy-preserving vaccination credentials")]
struct Cli {
    /// Directory holding sealed signing keys and their public halves.
    #[arg(long, global = true, env = "VAXCRED_KEYSTORE")]
    keystore: Option<PathBuf>,
    /// Append-only coupon registry log.
    #[arg(long, global = true, env = "VAXCRED_REGISTRY")]
    registry: Option<PathBuf>,
    /// Plain key = value settings file.
    #[arg(long, global = true, env = "VAXCRED_CONFIG")]
    config: Option<PathBuf>,
    /// Passphrase for key files and wallets.
    #[arg(long, global = true, env = "VAXCRED_PASSPHRASE", hide_env_values = true)]
    passphrase: Option<String>,
    #[command(subcommand)]
    role: Role,
}

#[derive(Subcommand)]
enum Role {
    /// Coupon and badge issuing authority.
    #[command(subcommand)]
    Issuer(issuer::IssuerCmd),
    /// Hands coupons to eligible subjects.
    #[command(subcommand)]
    Distributor(issuer::DistributorCmd),
    /// Admits coupon holders and requests credentials.
    #[command(subcommand)]
    Pharmacy(pharmacy::PharmacyCmd),
    /// Holder wallet operations.
    #[command(subcommand)]
    User(user::UserCmd),
    /// Credential checks at a venue.
    #[command(subcommand)]
    Venue(venue::VenueCmd),
    /// Symptom reporting, private aggregation and alert feeds.
    #[command(subcommand)]
    Health(health::HealthCmd),
    /// Scripted lifecycles and group-admission simulations.
    #[command(subcommand)]
    Sim(sim::SimCmd),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = Settings::resolve(cli.config.as_deref(), cli.keystore, cli.registry, cli.passphrase)?;
    match cli.role {
        Role::Issuer(c) => issuer::run_issuer(&settings, c),
        Role::Distributor(c) => issuer::run_distributor(&settings, c),
        Role::Pharmacy(c) => pharmacy::run(&settings, c),
        Role::User(c) => user::run(&settings, c),
        Role::Venue(c) => venue::run(&settings, c),
        Role::Health(c) => health::run(&settings, c),
        Role::Sim(c) => sim::run(c),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Rejected>().is_some() => {
            eprintln!("rejected: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_tree_is_consistent() {
        Cli::command().debug_assert();
    }
}

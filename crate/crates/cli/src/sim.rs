use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::Subcommand;
use vaxcred_core::group::{check_invariants, run_group_sim, ParticipantKind, SimConfig, TrustModeKind};
use vaxcred_core::{run_scenario, ScenarioScript};

#[derive(Subcommand)]
pub enum SimCmd {
    /// Run a lifecycle script, or a group-admission simulation with `--group`.
    Run {
        /// Script file; one `@<secs> <role> <action> [args]` per line.
        #[arg(long, conflicts_with = "happy")]
        script: Option<PathBuf>,
        /// Generate the happy-path script for this many users.
        #[arg(long)]
        happy: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the transcript here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Simulate group admission instead of a lifecycle.
        #[arg(long)]
        group: bool,
        #[arg(long, default_value = "issuer")]
        trust: String,
        #[arg(long, default_value_t = 4)]
        vaccinated: usize,
        #[arg(long, default_value_t = 2)]
        unvaccinated: usize,
        /// Adversaries: forged, mitm, stale-replay, eavesdropper.
        #[arg(long, value_delimiter = ',')]
        adversaries: Option<Vec<String>>,
        #[arg(long, default_value_t = 60)]
        period: u64,
        /// Seconds between receiving a code and showing it.
        #[arg(long, default_value_t = 5)]
        show_delay: u64,
        /// Logical arrival times (comma separated).
        #[arg(long, value_delimiter = ',')]
        clock: Option<Vec<u64>>,
    },
}

pub fn run(cmd: SimCmd) -> Result<()> {
    let SimCmd::Run {
        script,
        happy,
        seed,
        out,
        group,
        trust,
        vaccinated,
        unvaccinated,
        adversaries,
        period,
        show_delay,
        clock,
    } = cmd;
    let emit = |text: &str| -> Result<()> {
        match &out {
            Some(p) => Ok(fs::write(p, text)?),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    };
    if group {
        let mut cfg = SimConfig {
            n_honest_vaccinated: vaccinated,
            n_unvaccinated: unvaccinated,
            trust_mode: TrustModeKind::parse(&trust).with_context(|| format!("unknown trust mode `{trust}`"))?,
            rotation_period: period,
            show_delay,
            seed,
            ..SimConfig::default()
        };
        if let Some(list) = adversaries {
            cfg.adversaries = list
                .iter()
                .map(|a| ParticipantKind::parse(a).with_context(|| format!("unknown adversary `{a}`")))
                .collect::<Result<_>>()?;
        }
        if let Some(c) = clock {
            cfg.clock_script = c;
        }
        let report = run_group_sim(&cfg).map_err(|e| anyhow!(e))?;
        let log = report.log_text();
        emit(&log)?;
        let wrong: Vec<_> = report.outcomes.iter().filter(|o| o.admitted != o.expected).collect();
        let violations = check_invariants(&log);
        let admitted = report.outcomes.iter().filter(|o| o.admitted).count();
        println!(
            "summary participants={} admitted={admitted} mismatches={} violations={}",
            report.outcomes.len(),
            wrong.len(),
            violations.len()
        );
        if !wrong.is_empty() || !violations.is_empty() {
            bail!("group simulation broke an invariant: {wrong:?} {violations:?}");
        }
        return Ok(());
    }
    let script = match (script, happy) {
        (Some(path), _) => {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            ScenarioScript::parse(&text).map_err(|e| anyhow!("{}: line {}: {}", path.display(), e.line, e.message))?
        }
        (None, Some(n)) => ScenarioScript::happy_path(n),
        (None, None) => bail!("give --script, --happy N, or --group"),
    };
    let log = run_scenario(&script, seed);
    emit(&log.text())?;
    if out.is_some() {
        println!("{}", log.lines.last().map(String::as_str).unwrap_or(""));
    }
    if !log.violations.is_empty() {
        bail!("invariant violations: {:?}", log.violations);
    }
    Ok(())
}

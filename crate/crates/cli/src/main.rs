mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use config::{load_cost_table, parse_class, ConfigFile, Format, RunConfig};
use imdsec::crypto::ImplementationClass;
use imdsec::energy::calibrate::{derive_cost_table, CalibrationTargets};
use imdsec::energy::{CostTable, SecurityClass, UsageProfile};
use imdsec::netsim::{scenarios_named, table_scenarios, Outcome, Scenario, Verdict};
use imdsec::report::{audit_flash, energy_report, parse_card_key, BATTERY_CAPACITIES_J};
use imdsec::types::SessionMode;

/// Simulator for the implant access-control protocol.
#[derive(Parser)]
#[command(name = "imdsec", version)]
struct Cli {
    /// Cost table TOML; defaults to the built-in calibrated table.
    #[arg(long, global = true, env = "IMDSEC_COST_TABLE")]
    cost_table: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run attack scenarios and write trace, verdict and energy files.
    Run(RunArgs),
    /// Print per-class session, daily and lifetime energy figures.
    EnergyReport(EnergyArgs),
    /// Verify every signature record of an implant flash dump.
    AuditFlash(AuditArgs),
    /// Regenerate the cost table from the calibration targets.
    Calibrate {
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with run defaults; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario name (S1..S7) or path to a scenario TOML file.
    #[arg(long, conflicts_with = "all_scenarios")]
    scenario: Option<String>,
    /// Run every cell of the scenario matrix.
    #[arg(long)]
    all_scenarios: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Force the session mode; drops the cell's expectation unless --expect is given.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<SessionMode>,
    /// Offline sessions carry the card's signature (non-repudiation).
    #[arg(long)]
    nr_offline: Option<bool>,
    /// Expected outcome, e.g. `success` or `rejected(flag-mismatch)`.
    #[arg(long)]
    expect: Option<Outcome>,
    /// Implementation class of the implant and the energy report.
    #[arg(long)]
    class: Option<String>,
    /// Token and session lifetime T_L in milliseconds.
    #[arg(long)]
    token_lifetime_ms: Option<u64>,
    /// Implant signature flash size in bytes.
    #[arg(long)]
    flash_bytes: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Directory for the output files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EnergyArgs {
    /// Restrict to these classes; repeatable.
    #[arg(long)]
    class: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long)]
    sessions_per_day: Option<f64>,
}

#[derive(Args)]
struct AuditArgs {
    /// Raw flash dump, a sequence of 72-byte records.
    dump: PathBuf,
    /// Card certificate or public key, raw or hex.
    card_cert: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

fn parse_mode(s: &str) -> Result<SessionMode, String> {
    match s {
        "online" => Ok(SessionMode::Online),
        "offline" => Ok(SessionMode::Offline),
        "bedside" => Ok(SessionMode::Bedside),
        "remote" => Ok(SessionMode::Remote),
        _ => Err(format!("unknown mode `{s}` (online, offline, bedside, remote)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run(args) => cmd_run(args, cli.cost_table),
        Cmd::EnergyReport(args) => cmd_energy_report(args, cli.cost_table.as_deref()),
        Cmd::AuditFlash(args) => cmd_audit_flash(args),
        Cmd::Calibrate { out } => cmd_calibrate(out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn resolve(args: &RunArgs, cost_table: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply(ConfigFile::load(path)?)?;
    }
    if let Some(v) = &args.scenario {
        cfg.scenario = v.clone();
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.mode.is_some() {
        cfg.mode = args.mode;
    }
    if cost_table.is_some() {
        cfg.cost_table = cost_table;
    }
    if let Some(c) = &args.class {
        cfg.class = parse_class(c)?;
    }
    if args.token_lifetime_ms.is_some() {
        cfg.token_lifetime_ms = args.token_lifetime_ms;
    }
    if args.flash_bytes.is_some() {
        cfg.flash_bytes = args.flash_bytes;
    }
    if args.nr_offline.is_some() {
        cfg.nr_offline = args.nr_offline;
    }
    if let Some(f) = args.format {
        cfg.format = f;
    }
    if let Some(d) = &args.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn implementation(class: SecurityClass) -> Result<ImplementationClass> {
    Ok(match class {
        SecurityClass::HwAes => ImplementationClass::HardwareAccelerated,
        SecurityClass::SwAes => ImplementationClass::SoftwareAes,
        SecurityClass::SwSpeck => ImplementationClass::SoftwareSpeck,
        SecurityClass::SwMisty1 => ImplementationClass::SoftwareMisty1,
        SecurityClass::None => bail!("class `none` cannot run the secure protocol; use it with energy-report"),
    })
}

fn select(cfg: &RunConfig, all: bool, expect: Option<Outcome>) -> Result<Vec<Scenario>> {
    let mut cells = if all {
        table_scenarios()
    } else {
        let path = Path::new(&cfg.scenario);
        if path.extension().is_some_and(|e| e == "toml") || path.is_file() {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            vec![Scenario::from_toml(&text).with_context(|| format!("scenario {}", path.display()))?]
        } else {
            scenarios_named(&cfg.scenario)
        }
    };
    if cells.is_empty() {
        bail!("unknown scenario `{}` (S1..S7 or a .toml file)", cfg.scenario);
    }
    for s in &mut cells {
        if let Some(m) = cfg.mode.filter(|m| *m != s.mode) {
            s.mode = m;
            s.touch = m == SessionMode::Offline;
            s.expected = None;
        }
        if let Some(nr) = cfg.nr_offline.filter(|nr| *nr != s.signed_offline) {
            s.signed_offline = nr;
            s.expected = None;
        }
        if expect.is_some() {
            s.expected = expect;
        }
    }
    Ok(cells)
}

fn stem(s: &Scenario) -> String {
    s.label().to_lowercase().replace([' ', '+'], "-")
}

fn cmd_run(args: RunArgs, cost_table: Option<PathBuf>) -> Result<bool> {
    let cfg = resolve(&args, cost_table)?;
    let costs = Arc::new(load_cost_table(cfg.cost_table.as_deref())?);
    let class = implementation(cfg.class)?;
    let cells = select(&cfg, args.all_scenarios, args.expect)?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;

    let report = energy_report(&costs, &UsageProfile::default(), &[cfg.class], &BATTERY_CAPACITIES_J)?;
    let (energy, ext) = match cfg.format {
        Format::Text => (report.to_text(), "txt"),
        Format::Csv => (report.to_csv(), "csv"),
    };
    fs::write(cfg.out_dir.join(format!("energy.{ext}")), energy)?;

    let results: Vec<(String, Verdict)> = cells
        .par_iter()
        .map(|s| -> Result<(String, Verdict)> {
            let mut w = s.world_config(cfg.seed);
            w.costs = costs.clone();
            w.implant.class = class;
            if let Some(t) = cfg.token_lifetime_ms {
                w.server.token_lifetime_ms = t;
                w.implant.session_lifetime_ms = t;
            }
            if let Some(b) = cfg.flash_bytes {
                w.implant.flash_bytes = b;
            }
            let run = s.execute_with(&w);
            let verdict = s.judge(&run);
            let world = &run.setup.world;
            let ids = run.setup.ids;
            let ledger = world.implant(&ids.implant).ledger();
            let base = cfg.out_dir.join(stem(s));
            let line = format!("{} seed={} {}", s.label(), cfg.seed, verdict);
            fs::write(base.with_extension("trace"), world.trace_text())?;
            fs::write(
                base.with_extension("verdict"),
                format!(
                    "{line}\nbattery_spent_pj={} harvested_spent_pj={}\n",
                    ledger.battery_spent_pj(),
                    ledger.harvested_spent_pj()
                ),
            )?;
            fs::write(base.with_extension("flash"), world.implant(&ids.implant).flash().dump())?;
            fs::write(base.with_extension("cert"), hex::encode(world.card(&ids.card).certificate().to_bytes()))?;
            Ok((line, verdict))
        })
        .collect::<Result<_>>()?;

    let mut ok = true;
    for (line, verdict) in &results {
        println!("{line}");
        ok &= verdict.is_ok();
    }
    Ok(ok)
}

fn cmd_energy_report(args: EnergyArgs, cost_table: Option<&Path>) -> Result<bool> {
    let table: CostTable = load_cost_table(cost_table)?;
    let classes = if args.class.is_empty() {
        SecurityClass::ALL.to_vec()
    } else {
        args.class.iter().map(|c| parse_class(c)).collect::<Result<_>>()?
    };
    let mut profile = UsageProfile::default();
    if let Some(r) = args.sessions_per_day {
        profile.sessions_per_day = r;
    }
    let report = energy_report(&table, &profile, &classes, &BATTERY_CAPACITIES_J)?;
    print!(
        "{}",
        match args.format {
            Format::Text => report.to_text(),
            Format::Csv => report.to_csv(),
        }
    );
    Ok(true)
}

fn cmd_audit_flash(args: AuditArgs) -> Result<bool> {
    let dump = fs::read(&args.dump).with_context(|| format!("reading {}", args.dump.display()))?;
    let raw = fs::read(&args.card_cert).with_context(|| format!("reading {}", args.card_cert.display()))?;
    let key = parse_card_key(&raw).with_context(|| format!("card key {}", args.card_cert.display()))?;
    let report = audit_flash(&dump, &key);
    print!(
        "{}",
        match args.format {
            Format::Text => report.to_text(),
            Format::Csv => report.to_csv(),
        }
    );
    Ok(report.failures() == 0)
}

fn cmd_calibrate(out: Option<&Path>) -> Result<bool> {
    let toml = derive_cost_table(&CalibrationTargets::default()).to_toml();
    match out {
        Some(p) => fs::write(p, toml).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{toml}"),
    }
    Ok(true)
}

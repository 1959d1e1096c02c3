use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use imdsec::energy::{CostTable, SecurityClass};
use imdsec::types::SessionMode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Text,
    Csv,
}

/// Values a `--config` file may set. Every field is optional; flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub mode: Option<SessionMode>,
    pub cost_table: Option<PathBuf>,
    pub class: Option<String>,
    pub token_lifetime_ms: Option<u64>,
    pub flash_bytes: Option<usize>,
    pub nr_offline: Option<bool>,
    pub format: Option<Format>,
    pub out_dir: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Scenario name such as `S2`, or a path to a scenario TOML file.
    pub scenario: String,
    pub seed: u64,
    pub mode: Option<SessionMode>,
    pub cost_table: Option<PathBuf>,
    pub class: SecurityClass,
    pub token_lifetime_ms: Option<u64>,
    pub flash_bytes: Option<usize>,
    pub nr_offline: Option<bool>,
    pub format: Format,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "S1".into(),
            seed: 7,
            mode: None,
            cost_table: None,
            class: SecurityClass::HwAes,
            token_lifetime_ms: None,
            flash_bytes: None,
            nr_offline: None,
            format: Format::Text,
            out_dir: PathBuf::from("imdsec-out"),
        }
    }
}

impl RunConfig {
    pub fn apply(&mut self, file: ConfigFile) -> Result<()> {
        if let Some(v) = file.scenario {
            self.scenario = v;
        }
        if let Some(v) = file.seed {
            self.seed = v;
        }
        if file.mode.is_some() {
            self.mode = file.mode;
        }
        if file.cost_table.is_some() {
            self.cost_table = file.cost_table;
        }
        if let Some(c) = file.class {
            self.class = parse_class(&c)?;
        }
        if file.token_lifetime_ms.is_some() {
            self.token_lifetime_ms = file.token_lifetime_ms;
        }
        if file.flash_bytes.is_some() {
            self.flash_bytes = file.flash_bytes;
        }
        if file.nr_offline.is_some() {
            self.nr_offline = file.nr_offline;
        }
        if let Some(f) = file.format {
            self.format = f;
        }
        if let Some(d) = file.out_dir {
            self.out_dir = d;
        }
        Ok(())
    }
}

pub fn parse_class(s: &str) -> Result<SecurityClass> {
    match SecurityClass::parse(s) {
        Some(c) => Ok(c),
        None => {
            let names: Vec<_> = SecurityClass::ALL.iter().map(|c| c.name()).collect();
            bail!("unknown class `{s}` (expected one of {})", names.join(", "))
        }
    }
}

pub fn load_cost_table(path: Option<&Path>) -> Result<CostTable> {
    match path {
        Some(p) => Ok(CostTable::load(p)?),
        None => Ok(CostTable::default()),
    }
}

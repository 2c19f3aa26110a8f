//! Scenario files as the CLI sees them: a scenario plus an optional `[cli]`
//! table holding the file equivalents of the command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::netsim::Scenario;
use crate::types::PlatformId;

pub const GHG_ENV: &str = "DLTSIM_GHG_INTENSITY";

pub const DEFAULT_MANAGERS: [usize; 4] = [4, 8, 12, 16];
pub const DEFAULT_LOADS: [f64; 5] = [20.0, 40.0, 60.0, 80.0, 100.0];

/// The `[cli]` table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliTable {
    pub out: Option<PathBuf>,
    pub managers: Option<Vec<usize>>,
    pub loads: Option<Vec<f64>>,
    pub force: bool,
}

/// Values given on the command line; `None` defers to the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub platform: Option<PlatformId>,
    pub managers: Option<Vec<usize>>,
    pub loads: Option<Vec<f64>>,
    pub force: bool,
}

/// Everything a run or sweep needs, after flags, environment and file
/// have been merged.
#[derive(Clone, Debug)]
pub struct Effective {
    pub scenario: Scenario,
    pub out: PathBuf,
    pub managers: Vec<usize>,
    pub loads: Vec<f64>,
    pub force: bool,
}

impl Effective {
    /// The merged configuration as TOML, loadable again with [`load`].
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(&self.scenario).expect("scenario serializes");
        let cli = CliTable {
            out: Some(std::path::absolute(&self.out).unwrap_or_else(|_| self.out.clone())),
            managers: Some(self.managers.clone()),
            loads: Some(self.loads.clone()),
            force: self.force,
        };
        table.insert("cli".into(), toml::Value::try_from(cli).expect("cli table serializes"));
        toml::to_string(&table).expect("table serializes")
    }
}

/// Reads `path`, applies `flags` and the environment, and validates.
pub fn load(path: &Path, flags: &Overrides, ghg_env: Option<&str>) -> Result<Effective, CliError> {
    let shown = path.display();
    let src = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read scenario file `{shown}`: {e}")))?;
    let mut table: toml::Table =
        toml::from_str(&src).map_err(|e| CliError::Config(format!("{shown}: {e}")))?;
    let cli: CliTable = match table.remove("cli") {
        Some(v) => v
            .try_into()
            .map_err(|e| CliError::Config(format!("{shown}: table `cli`: {e}")))?,
        None => CliTable::default(),
    };
    let mut scenario: Scenario = toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Config(format!("{shown}: {e}")))?;

    let dir = path.parent().unwrap_or(Path::new("."));
    scenario.rebase(dir);
    if let Some(p) = &scenario.profile {
        // Echoed configs must load from wherever they are written.
        scenario.profile = Some(std::path::absolute(p).unwrap_or_else(|_| p.clone()));
    }
    if let Some(seed) = flags.seed {
        scenario.seed = seed;
    }
    if let Some(platform) = flags.platform {
        if platform != scenario.platform && scenario.profile.is_some() {
            return Err(CliError::Config(format!(
                "{shown}: `--platform {platform}` conflicts with field `profile`"
            )));
        }
        scenario.platform = platform;
    }
    if let Some(raw) = ghg_env {
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{GHG_ENV}={raw:?} is not a number")))?;
        scenario.carbon.ghg_intensity = v;
    }

    let out = match (&flags.out, &cli.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) if o.is_relative() => dir.join(o),
        (None, Some(o)) => o.clone(),
        (None, None) => PathBuf::from("runs"),
    };
    let managers = flags
        .managers
        .clone()
        .or(cli.managers)
        .unwrap_or_else(|| DEFAULT_MANAGERS.to_vec());
    let loads = flags.loads.clone().or(cli.loads).unwrap_or_else(|| DEFAULT_LOADS.to_vec());
    if managers.is_empty() || managers.contains(&0) {
        return Err(CliError::Config(format!(
            "{shown}: field `cli.managers` must list positive counts"
        )));
    }
    if loads.is_empty() || loads.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(CliError::Config(format!(
            "{shown}: field `cli.loads` must list positive rates"
        )));
    }
    scenario
        .validate()
        .map_err(|e| CliError::Config(format!("{shown}: {e}")))?;
    Ok(Effective {
        scenario,
        out,
        managers,
        loads,
        force: flags.force || cli.force,
    })
}

//! The per-platform carbon table: CPU share in, energy and emissions out.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{output, CliError};
use crate::metrics::{energy_for_operation, ghg_emission, CarbonParams, Energy, Ghg};
use crate::netsim::Role;
use crate::types::PlatformId;

/// Average blockchain CPU share per platform from the two-manager testbed.
pub const TESTBED_CPU: &str = include_str!("../../fixtures/testbed_cpu.csv");

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct CpuRow {
    pub platform: PlatformId,
    pub cpu_percent: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarbonRow {
    pub platform: PlatformId,
    pub cpu_percent: f64,
    pub energy: Energy,
    pub ghg: Ghg,
}

/// Parses `platform,cpu_percent` rows. Every platform must appear once.
pub fn parse_cpu(src: &str, origin: &str) -> Result<Vec<CpuRow>, CliError> {
    let mut r = csv::Reader::from_reader(src.as_bytes());
    let rows: Vec<CpuRow> = r
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    for p in PlatformId::ALL {
        match rows.iter().filter(|r| r.platform == p).count() {
            1 => {}
            0 => return Err(CliError::Config(format!("{origin}: no row for platform `{p}`"))),
            _ => return Err(CliError::Config(format!("{origin}: platform `{p}` listed twice"))),
        }
    }
    if let Some(r) = rows.iter().find(|r| !(0.0..=100.0).contains(&r.cpu_percent)) {
        return Err(CliError::Config(format!(
            "{origin}: `cpu_percent` for {} must lie in [0, 100], got {}",
            r.platform, r.cpu_percent
        )));
    }
    Ok(rows)
}

/// Mean manager CPU share per platform over the run directories under
/// `root`. Sweep cells are skipped; every platform needs at least one run.
pub fn cpu_from_runs(root: &Path) -> Result<Vec<CpuRow>, CliError> {
    if !root.is_dir() {
        return Err(CliError::Config(format!("`{}` is not a directory", root.display())));
    }
    let (runs, _) = output::discover(root)?;
    let mut acc: BTreeMap<PlatformId, (f64, usize)> = BTreeMap::new();
    for dir in runs {
        if dir.parent().and_then(Path::file_name) == Some(output::CELLS.as_ref()) {
            continue;
        }
        let r = output::read_report(&dir)?;
        let e = acc.entry(r.platform).or_default();
        e.0 += r.mean_cpu(Role::Manager);
        e.1 += 1;
    }
    PlatformId::ALL
        .iter()
        .map(|&p| match acc.get(&p) {
            Some(&(sum, n)) => Ok(CpuRow {
                platform: p,
                cpu_percent: 100.0 * sum / n as f64,
            }),
            None => Err(CliError::Config(format!(
                "no `{p}` run under `{}`",
                root.display()
            ))),
        })
        .collect()
}

pub fn compute(rows: &[CpuRow], params: &CarbonParams) -> Vec<CarbonRow> {
    rows.iter()
        .map(|r| {
            let energy = energy_for_operation(params, r.cpu_percent / 100.0)
                .expect("range checked on parse");
            CarbonRow {
                platform: r.platform,
                cpu_percent: r.cpu_percent,
                energy,
                ghg: ghg_emission(energy, params.intensity_ukg_per_kwh),
            }
        })
        .collect()
}

fn micro(v: u128) -> String {
    format!("{}.{:06}", v / 1_000_000, v % 1_000_000)
}

/// Carbon table as CSV, quantities to 1e-6.
pub fn to_csv(rows: &[CarbonRow], params: &CarbonParams) -> String {
    let mut s = String::from(
        "platform,power_kw,energy_kwh,cpu_percent,operation_kwh,ghg_intensity_kg_per_kwh,ghg_kg\n",
    );
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{},{}\n",
            r.platform,
            params.power_kw(),
            micro(params.full_load_energy().micro_kwh() as u128),
            r.cpu_percent,
            micro(r.energy.micro_kwh() as u128),
            params.intensity(),
            micro(r.ghg.micro_kg()),
        );
    }
    s
}

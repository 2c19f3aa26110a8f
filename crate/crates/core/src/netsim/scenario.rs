use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ledger::TxKind;
use crate::marketplace::MarketWorkload;
use crate::metrics::CarbonParams;
use crate::profile::PlatformProfile;
use crate::types::PlatformId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arrival {
    /// Evenly spaced, clients staggered within one interval.
    Fixed,
    Poisson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub manager_latency_ms: f64,
    /// Bytes per second.
    pub manager_bandwidth: f64,
    pub client_latency_ms: f64,
    pub client_bandwidth: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            manager_latency_ms: 1.0,
            manager_bandwidth: 100e6,
            client_latency_ms: 5.0,
            client_bandwidth: 10e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarbonConfig {
    pub machine_power_kw: f64,
    /// Defaults to `machine_power_kw`.
    pub client_power_kw: Option<f64>,
    /// kg CO2-eq per kWh.
    pub ghg_intensity: f64,
    pub horizon_hours: f64,
}

impl Default for CarbonConfig {
    fn default() -> Self {
        CarbonConfig {
            machine_power_kw: 0.06,
            client_power_kw: None,
            ghg_intensity: 0.540,
            horizon_hours: 1.0,
        }
    }
}

impl CarbonConfig {
    pub fn manager_params(&self) -> Result<CarbonParams, crate::metrics::CarbonError> {
        CarbonParams::new(self.machine_power_kw, self.horizon_hours, self.ghg_intensity)
    }

    pub fn client_params(&self) -> Result<CarbonParams, crate::metrics::CarbonError> {
        let kw = self.client_power_kw.unwrap_or(self.machine_power_kw);
        CarbonParams::new(kw, self.horizon_hours, self.ghg_intensity)
    }
}

/// A run: platform, network shape and workload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub platform: PlatformId,
    pub managers: usize,
    pub clients: usize,
    /// Transactions per second, per client unless `load_is_total`.
    pub input_tps: f64,
    pub load_is_total: bool,
    pub duration_s: f64,
    pub seed: u64,
    /// Overrides the profile's block interval / batch timeout / slot length.
    pub block_interval_ms: Option<f64>,
    /// Throughput counts commits inside `[warmup_s, duration_s - guard_s)`;
    /// latency is sampled over transactions created in the same window.
    pub warmup_s: f64,
    pub guard_s: f64,
    pub payload_bytes: usize,
    pub tx_kind: TxKind,
    pub arrival: Arrival,
    /// Fabric key space size. `None` gives every transaction its own key.
    pub contention_keys: Option<u64>,
    pub links: LinkConfig,
    pub carbon: CarbonConfig,
    /// Marketplace transactions injected through the clients on top of
    /// the synthetic load.
    pub market: Option<MarketWorkload>,
    /// Custom profile file; the built-in profile for `platform` otherwise.
    pub profile: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "baseline".into(),
            platform: PlatformId::Quorum,
            managers: 2,
            clients: 2,
            input_tps: 10.0,
            load_is_total: false,
            duration_s: 60.0,
            seed: 1,
            block_interval_ms: None,
            warmup_s: 5.0,
            guard_s: 10.0,
            payload_bytes: 1024,
            tx_kind: TxKind::DataAnchor,
            arrival: Arrival::Fixed,
            contention_keys: None,
            links: LinkConfig::default(),
            carbon: CarbonConfig::default(),
            market: None,
            profile: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InvalidScenario {
    #[error("scenario field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("profile: {0}")]
    Profile(String),
}

fn field(field: &'static str, reason: impl Into<String>) -> InvalidScenario {
    InvalidScenario::Field {
        field,
        reason: reason.into(),
    }
}

impl Scenario {
    /// Two managers, two clients, 10 tx/s per client for 60 s.
    pub fn baseline(platform: PlatformId) -> Scenario {
        Scenario {
            name: format!("baseline-{platform}"),
            platform,
            ..Scenario::default()
        }
    }

    pub fn from_toml(src: &str) -> Result<Scenario, InvalidScenario> {
        let s = Self::parse(src)?;
        s.validate()?;
        Ok(s)
    }

    fn parse(src: &str) -> Result<Scenario, InvalidScenario> {
        toml::from_str(src).map_err(|e| InvalidScenario::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Scenario, InvalidScenario> {
        let src = std::fs::read_to_string(path).map_err(|e| InvalidScenario::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut s = Self::parse(&src)?;
        s.rebase(path.parent().unwrap_or(Path::new(".")));
        s.validate()?;
        Ok(s)
    }

    /// Makes a relative `profile` path relative to `dir` instead.
    pub fn rebase(&mut self, dir: &Path) {
        if let Some(p) = &self.profile {
            if p.is_relative() {
                self.profile = Some(dir.join(p));
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// The profile this scenario runs, with the interval override applied.
    pub fn resolve_profile(&self) -> Result<PlatformProfile, InvalidScenario> {
        let mut p = match &self.profile {
            Some(path) => {
                PlatformProfile::load(path).map_err(|e| InvalidScenario::Profile(e.to_string()))?
            }
            None => PlatformProfile::builtin(self.platform),
        };
        if p.platform != self.platform {
            return Err(field(
                "profile",
                format!("profile is for {}, scenario runs {}", p.platform, self.platform),
            ));
        }
        if let Some(ms) = self.block_interval_ms {
            p.chain.block_interval_ms = ms;
        }
        Ok(p)
    }

    /// Offered load summed over all clients.
    pub fn total_tps(&self) -> f64 {
        if self.load_is_total {
            self.input_tps
        } else {
            self.input_tps * self.clients as f64
        }
    }

    pub fn per_client_tps(&self) -> f64 {
        if self.clients == 0 {
            0.0
        } else {
            self.total_tps() / self.clients as f64
        }
    }

    pub fn validate(&self) -> Result<(), InvalidScenario> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(field("name", "must be non-empty and contain no path separators"));
        }
        if self.managers == 0 {
            return Err(field("managers", "at least one manager is required"));
        }
        if self.clients == 0 {
            return Err(field("clients", "at least one client is required"));
        }
        if !(self.input_tps.is_finite() && self.input_tps >= 0.0) {
            return Err(field("input_tps", "must be a non-negative number"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(field("duration_s", "must be positive"));
        }
        if !(self.warmup_s >= 0.0 && self.guard_s >= 0.0)
            || self.warmup_s + self.guard_s >= self.duration_s
        {
            return Err(field(
                "warmup_s",
                "warmup_s and guard_s must be non-negative and leave a measurement window",
            ));
        }
        if let Some(ms) = self.block_interval_ms {
            if !(ms.is_finite() && ms > 0.0) {
                return Err(field("block_interval_ms", "must be positive"));
            }
        }
        if self.contention_keys == Some(0) {
            return Err(field("contention_keys", "must be positive when set"));
        }
        let l = &self.links;
        if !(l.manager_latency_ms >= 0.0 && l.client_latency_ms >= 0.0) {
            return Err(field("links", "latencies must be non-negative"));
        }
        if !(l.manager_bandwidth > 0.0 && l.client_bandwidth > 0.0) {
            return Err(field("links", "bandwidths must be positive"));
        }
        self.carbon
            .manager_params()
            .and(self.carbon.client_params())
            .map_err(|e| field("carbon", e.to_string()))?;
        self.resolve_profile()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let s = Scenario::baseline(PlatformId::Iota);
        s.validate().unwrap();
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
        assert_eq!(s.total_tps(), 20.0);
    }

    #[test]
    fn bad_fields_are_named() {
        let err = Scenario::from_toml("managers = 0").unwrap_err();
        assert!(err.to_string().contains("`managers`"), "{err}");
        let err = Scenario::from_toml("duration_s = -1.0").unwrap_err();
        assert!(err.to_string().contains("`duration_s`"), "{err}");
        assert!(matches!(
            Scenario::from_toml("bogus = 1"),
            Err(InvalidScenario::Parse(_))
        ));
    }

    #[test]
    fn aggregate_load_flag() {
        let s = Scenario {
            input_tps: 100.0,
            load_is_total: true,
            clients: 4,
            ..Scenario::default()
        };
        assert_eq!(s.per_client_tps(), 25.0);
    }
}

//! Python bindings. The module is imported as `dltsim`.

use std::collections::HashMap;
use std::fmt::Display;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use dltsim::channel::{Channel, ChannelContract, Payout};
use dltsim::consensus::pow_seal as seal;
use dltsim::ledger::{verify_chain, wire_size, Block, Chain, Hash, Transaction, TxKind};
use dltsim::marketplace::{replay, run_workload, MarketWorkload};
use dltsim::metrics::{energy_for_operation, ghg_emission, CarbonParams, MetricsReport};
use dltsim::netsim::{self, Scenario};
use dltsim::profile::PlatformProfile;
use dltsim::{NodeId, PlatformId, SimTime};

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn platform(name: &str) -> PyResult<PlatformId> {
    name.parse().map_err(value_err)
}

fn tx_kind(name: &str) -> PyResult<TxKind> {
    TxKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| value_err(format!("unknown transaction kind {name:?}")))
}

#[pyfunction]
fn sha256_hex(data: &[u8]) -> String {
    Hash::digest(data).to_hex()
}

#[pyclass(name = "Transaction", frozen)]
struct PyTransaction {
    inner: Transaction,
}

#[pymethods]
impl PyTransaction {
    #[new]
    #[pyo3(signature = (sender, kind, payload, created_at_us = 0))]
    fn new(sender: u32, kind: &str, payload: Vec<u8>, created_at_us: u64) -> PyResult<Self> {
        Ok(PyTransaction {
            inner: Transaction::new(NodeId(sender), tx_kind(kind)?, payload, SimTime(created_at_us)),
        })
    }

    #[getter]
    fn tx_id(&self) -> String {
        self.inner.tx_id.to_hex()
    }

    #[getter]
    fn sender(&self) -> u32 {
        self.inner.sender.0
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn payload<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.payload)
    }

    #[getter]
    fn created_at_us(&self) -> u64 {
        self.inner.created_at.0
    }

    fn verify(&self) -> bool {
        self.inner.verify()
    }

    /// Bytes on the wire under `platform`'s size model.
    fn wire_size(&self, platform_name: &str) -> PyResult<u64> {
        let profile = PlatformProfile::builtin(platform(platform_name)?);
        Ok(wire_size(&profile.wire, &self.inner))
    }

    fn __repr__(&self) -> String {
        format!("Transaction({}, {})", self.inner.kind.name(), self.inner.tx_id.short())
    }
}

#[pyclass(name = "Chain")]
struct PyChain {
    inner: Chain,
}

#[pymethods]
impl PyChain {
    #[new]
    fn new() -> Self {
        PyChain { inner: Chain::new() }
    }

    /// Appends a block and returns its hash.
    #[pyo3(signature = (txs, proposer = 0, timestamp_us = 0))]
    fn append(&mut self, txs: Vec<PyRef<'_, PyTransaction>>, proposer: u32, timestamp_us: u64) -> String {
        let txs = txs.iter().map(|t| t.inner.clone()).collect();
        self.inner
            .append(txs, NodeId(proposer), SimTime(timestamp_us))
            .block_hash
            .to_hex()
    }

    #[getter]
    fn height(&self) -> u64 {
        self.inner.height()
    }

    #[getter]
    fn tip_hash(&self) -> String {
        self.inner.tip().block_hash.to_hex()
    }

    fn block_hashes(&self) -> Vec<String> {
        self.inner.blocks().iter().map(|b| b.block_hash.to_hex()).collect()
    }

    fn verify(&self) -> bool {
        verify_chain(self.inner.blocks())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Seals a child of genesis at `difficulty_bits`; returns nonce, attempts
/// and hash.
#[pyfunction]
#[pyo3(signature = (difficulty_bits, seed = 0))]
fn pow_seal<'py>(py: Python<'py>, difficulty_bits: u32, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    if difficulty_bits > 64 {
        return Err(value_err("difficulty_bits must be at most 64"));
    }
    let block = Block::child_of(&Block::genesis(), Vec::new(), NodeId(0), SimTime::ZERO);
    let sealed = py.detach(|| seal(block, difficulty_bits, seed));
    let d = PyDict::new(py);
    d.set_item("nonce", sealed.block.nonce)?;
    d.set_item("attempts", sealed.attempts)?;
    d.set_item("hash", sealed.block.block_hash.to_hex())?;
    Ok(d)
}

/// A two-party channel: one on-chain open, any number of off-chain
/// updates, one on-chain close.
#[pyclass(name = "PaymentChannel")]
struct PyChannel {
    contract: ChannelContract,
    channel: Channel,
    payout: Option<Payout>,
}

#[pymethods]
impl PyChannel {
    #[new]
    fn new(party_a: u32, party_b: u32, deposit: u64) -> PyResult<Self> {
        let mut contract = ChannelContract::new();
        let (channel, _) = contract
            .open_channel(NodeId(party_a), NodeId(party_b), deposit, SimTime::ZERO)
            .map_err(value_err)?;
        Ok(PyChannel {
            contract,
            channel,
            payout: None,
        })
    }

    /// Moves `amount` from A to B off-chain, signed by both.
    #[pyo3(signature = (amount, now_us = 0))]
    fn pay(&mut self, amount: u64, now_us: u64) -> PyResult<()> {
        let st = self.channel.state();
        let signers = [st.party_a, st.party_b];
        self.channel
            .update(amount, &signers, SimTime(now_us))
            .map(|_| ())
            .map_err(value_err)
    }

    /// Settles on-chain and returns `(to_a, to_b)`.
    #[pyo3(signature = (now_us = 0))]
    fn close(&mut self, now_us: u64) -> PyResult<(u64, u64)> {
        let (payout, _) = self
            .contract
            .close_channel(&mut self.channel, SimTime(now_us))
            .map_err(value_err)?;
        self.payout = Some(payout);
        Ok((payout.to_a, payout.to_b))
    }

    #[getter]
    fn balances(&self) -> (u64, u64) {
        let s = self.channel.state();
        (s.balance_a, s.balance_b)
    }

    #[getter]
    fn seq(&self) -> u64 {
        self.channel.state().seq
    }

    #[getter]
    fn on_chain_tx_count(&self) -> usize {
        self.contract.on_chain_tx_count(self.channel.id())
    }

    #[getter]
    fn closed(&self) -> bool {
        self.channel.is_closed()
    }
}

#[pyclass(name = "Report", frozen)]
struct PyReport {
    inner: MetricsReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn scenario(&self) -> &str {
        &self.inner.scenario
    }

    #[getter]
    fn platform(&self) -> &'static str {
        self.inner.platform.name()
    }

    #[getter]
    fn validated_tps(&self) -> f64 {
        self.inner.validated_tps
    }

    #[getter]
    fn mean_latency_ms(&self) -> f64 {
        self.inner.latency_ms.mean_ms
    }

    #[getter]
    fn p99_latency_ms(&self) -> f64 {
        self.inner.latency_ms.p99_ms
    }

    #[getter]
    fn txs<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let t = &self.inner.txs;
        let d = PyDict::new(py);
        d.set_item("generated", t.generated)?;
        d.set_item("finalized", t.finalized)?;
        d.set_item("invalidated", t.invalidated)?;
        d.set_item("pending", t.pending)?;
        Ok(d)
    }

    #[getter]
    fn manager_bytes_per_tx(&self) -> Option<f64> {
        self.inner.overhead().manager
    }

    #[getter]
    fn client_bytes_per_tx(&self) -> Option<f64> {
        self.inner.overhead().client
    }

    /// One dict per node, same fields as `to_csv`.
    fn nodes<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .nodes
            .iter()
            .map(|n| {
                let d = PyDict::new(py);
                d.set_item("node", n.node.0)?;
                d.set_item("role", n.role.name())?;
                d.set_item("bytes_sent", n.bytes_sent)?;
                d.set_item("bytes_received", n.bytes_received)?;
                d.set_item("messages_sent", n.messages_sent)?;
                d.set_item("messages_received", n.messages_received)?;
                d.set_item("cpu_fraction", n.cpu_fraction)?;
                d.set_item("saturated", n.saturated)?;
                d.set_item("energy_kwh", n.energy.kwh())?;
                d.set_item("ghg_kg", n.ghg.kg())?;
                Ok(d)
            })
            .collect()
    }

    fn to_csv(&self) -> String {
        String::from_utf8(self.inner.to_csv()).expect("csv is utf-8")
    }

    fn summary(&self) -> String {
        self.inner.summary()
    }
}

fn scenario_from(toml: Option<&str>, platform_name: Option<&str>, seed: Option<u64>) -> PyResult<Scenario> {
    let mut s = match toml {
        Some(src) => Scenario::from_toml(src).map_err(value_err)?,
        None => Scenario::baseline(platform(platform_name.unwrap_or("quorum"))?),
    };
    if let (Some(_), Some(p)) = (toml, platform_name) {
        s.platform = platform(p)?;
    }
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

/// The two-manager, two-client baseline for `platform_name`, as TOML.
#[pyfunction]
fn baseline_scenario(platform_name: &str) -> PyResult<String> {
    Ok(Scenario::baseline(platform(platform_name)?).to_toml())
}

/// Runs a scenario given as TOML, or the baseline for `platform`.
#[pyfunction]
#[pyo3(signature = (scenario = None, platform = None, seed = None))]
fn run_scenario(
    py: Python<'_>,
    scenario: Option<&str>,
    platform: Option<&str>,
    seed: Option<u64>,
) -> PyResult<PyReport> {
    let s = scenario_from(scenario, platform, seed)?;
    let report = py
        .detach(|| netsim::run_scenario(&s))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PyReport { inner: report })
}

/// Grid of (managers, aggregate load) cells; one dict per cell.
#[pyfunction]
#[pyo3(signature = (managers, loads, scenario = None, platform = None))]
fn sweep_managers<'py>(
    py: Python<'py>,
    managers: Vec<usize>,
    loads: Vec<f64>,
    scenario: Option<&str>,
    platform: Option<&str>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let base = scenario_from(scenario, platform, None)?;
    let rows = py
        .detach(|| netsim::sweep_managers(&base, &managers, &loads))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("platform", r.platform.name())?;
            d.set_item("managers", r.managers)?;
            d.set_item("clients", r.clients)?;
            d.set_item("load_tps", r.load_tps)?;
            d.set_item("validated_tps", r.validated_tps)?;
            d.set_item("mean_latency_ms", r.mean_latency_ms)?;
            d.set_item("p99_latency_ms", r.p99_latency_ms)?;
            d.set_item("manager_bytes_per_tx", r.manager_bytes_per_tx)?;
            d.set_item("client_bytes_per_tx", r.client_bytes_per_tx)?;
            Ok(d)
        })
        .collect()
}

/// Energy (kWh) and emissions (kg CO2-eq) for each `{platform: cpu_percent}`.
#[pyfunction]
#[pyo3(signature = (cpu_percent, power_kw = 0.06, horizon_hours = 1.0, intensity = 0.540))]
fn carbon_table<'py>(
    py: Python<'py>,
    cpu_percent: HashMap<String, f64>,
    power_kw: f64,
    horizon_hours: f64,
    intensity: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let params = CarbonParams::new(power_kw, horizon_hours, intensity).map_err(value_err)?;
    let mut names: Vec<_> = cpu_percent.into_iter().collect();
    names.sort_by(|a, b| a.0.cmp(&b.0));
    names
        .into_iter()
        .map(|(name, pct)| {
            let energy = energy_for_operation(&params, pct / 100.0).map_err(value_err)?;
            let ghg = ghg_emission(energy, params.intensity_ukg_per_kwh);
            let d = PyDict::new(py);
            d.set_item("platform", name)?;
            d.set_item("cpu_percent", pct)?;
            d.set_item("energy_kwh", energy.kwh())?;
            d.set_item("ghg_kg", ghg.kg())?;
            d.set_item("ghg_ukg", ghg.micro_kg() as u64)?;
            Ok(d)
        })
        .collect()
}

/// Runs the rental marketplace workload and replays its ledger.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn run_market_workload<'py>(py: Python<'py>, config: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let cfg: MarketWorkload = match config {
        Some(src) => toml::from_str(src).map_err(value_err)?,
        None => MarketWorkload::default(),
    };
    let out = run_workload(&cfg).map_err(value_err)?;
    let replayed = replay(&out.txs, out.market.time_unit()).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("transactions", out.txs.len())?;
    d.set_item("agreements", out.market.state().agreements.len())?;
    d.set_item("end_time", out.end_time)?;
    d.set_item("replay_matches", &replayed == out.market.state())?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "dltsim")]
fn dltsim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTransaction>()?;
    m.add_class::<PyChain>()?;
    m.add_class::<PyChannel>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(sha256_hex, m)?)?;
    m.add_function(wrap_pyfunction!(pow_seal, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_managers, m)?)?;
    m.add_function(wrap_pyfunction!(carbon_table, m)?)?;
    m.add_function(wrap_pyfunction!(run_market_workload, m)?)?;
    Ok(())
}

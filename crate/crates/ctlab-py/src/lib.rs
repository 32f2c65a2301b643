//! Python bindings: the protocol primitives, the loopback exposure
//! server, and one-call wrappers for each attack pipeline. Structured
//! results cross the boundary as JSON strings.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ctlab::cli::ScenarioFile;
use ctlab::protocol::{derive_identifier, EpochClock, TemporaryKey};
use ctlab::server::ExposureServer as Server;
use ctlab::world::population::run_population;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_key(key_hex: &str, day: u64) -> PyResult<TemporaryKey> {
    let bytes = hex::decode(key_hex).map_err(value_err)?;
    let key_bytes: [u8; 16] =
        bytes.try_into().map_err(|_| value_err("key must be 16 hex-encoded bytes"))?;
    Ok(TemporaryKey::from_bytes(key_bytes, day))
}

/// Rolling identifier (hex) for a daily key at an epoch.
#[pyfunction]
fn derive_code(key_hex: &str, day: u64, epoch: u64) -> PyResult<String> {
    let key = parse_key(key_hex, day)?;
    let code = derive_identifier(&key, epoch, &EpochClock::default()).map_err(value_err)?;
    Ok(code.hex())
}

#[pyfunction]
fn epoch_of(sim_time: f64) -> u64 {
    EpochClock::default().epoch_of(sim_time)
}

#[pyfunction]
fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    ctlab::poi::haversine_km((lat1, lon1), (lat2, lon2))
}

#[pyfunction]
fn admission_window(r_wifi: f64, r_bt: f64, mean_speed: f64) -> PyResult<f64> {
    ctlab::deanon::admission_window(r_wifi, r_bt, mean_speed).map_err(value_err)
}

/// (coverage, day_overlap, visit_frequency) on the bundled synthetic city.
#[pyfunction]
fn fixture_coverage(p: f64, radius_km: f64) -> PyResult<(f64, f64, f64)> {
    let (records, population) = ctlab::poi::synthetic_city_fixture();
    let refs: Vec<&ctlab::poi::PoiRecord> = records.iter().collect();
    let coverage =
        ctlab::poi::estimate_coverage(&refs, population, p, radius_km).map_err(runtime_err)?;
    Ok((coverage, ctlab::poi::day_overlap(&refs), ctlab::poi::visit_frequency(&refs)))
}

/// Contact-pollution attack on a placed scenario (TOML text); JSON report.
#[pyfunction]
fn run_pollution(config_toml: &str, seed: u64) -> PyResult<String> {
    let cfg = ScenarioFile::parse(config_toml)
        .and_then(|f| f.into_config())
        .map_err(value_err)?;
    let report = ctlab::pollution::run_pollution(&cfg, seed).map_err(runtime_err)?;
    serde_json::to_string(&report).map_err(runtime_err)
}

/// Contact-isolation attack on a placed scenario (TOML text); JSON report.
#[pyfunction]
#[pyo3(signature = (config_toml, seed, pools = 3))]
fn run_isolation(config_toml: &str, seed: u64, pools: usize) -> PyResult<String> {
    let cfg = ScenarioFile::parse(config_toml)
        .and_then(|f| f.into_config())
        .map_err(value_err)?;
    let results = ctlab::cli::isolate_scenario(&cfg, seed, pools).map_err(runtime_err)?;
    serde_json::to_string(&results).map_err(runtime_err)
}

/// Deanonymization detection rate for one population run (TOML text).
#[pyfunction]
fn detection_rate(config_toml: &str, seed: u64) -> PyResult<f64> {
    let cfg = ScenarioFile::parse(config_toml)
        .and_then(|f| f.into_config())
        .map_err(value_err)?;
    let params = match cfg.kind {
        ctlab::world::ScenarioKind::Population(p) => p,
        _ => return Err(value_err("config must hold a [population] table")),
    };
    let out = run_population(&params, seed, &EpochClock::default()).map_err(runtime_err)?;
    let window = ctlab::deanon::admission_window(params.r_wifi, params.r_bt, params.mean_speed())
        .map_err(value_err)?;
    Ok(ctlab::deanon::score_population(&out, window).detection_rate)
}

/// The loopback exposure server, one instance per object.
#[pyclass(name = "ExposureServer")]
struct PyExposureServer {
    inner: Server,
}

#[pymethods]
impl PyExposureServer {
    #[new]
    fn new() -> Self {
        Self { inner: Server::new(EpochClock::default()) }
    }

    fn register_covidcode(&mut self, code: &str) {
        self.inner.register_covidcode(code);
    }

    fn create_account(&mut self, source_addr: &str) -> PyResult<u64> {
        self.inner.create_account(source_addr).map_err(runtime_err)
    }

    /// Uploads (code_hex, epoch) pairs to an account.
    fn upload_records(&mut self, account: u64, codes: Vec<(String, u64)>) -> PyResult<()> {
        let mut decoded = Vec::with_capacity(codes.len());
        for (hex_id, epoch) in codes {
            let bytes = hex::decode(&hex_id).map_err(value_err)?;
            let id_bytes: [u8; 16] =
                bytes.try_into().map_err(|_| value_err("code must be 16 hex-encoded bytes"))?;
            decoded.push(ctlab::protocol::EncounterCode { id_bytes, epoch_index: epoch });
        }
        self.inner.upload_records(account, &decoded).map_err(runtime_err)
    }

    /// Publishes (key_hex, day) pairs under a covidcode; returns how many
    /// keys were new.
    fn report_positive(
        &mut self,
        covidcode: &str,
        keys: Vec<(String, u64)>,
        report_day: u64,
    ) -> PyResult<usize> {
        let mut decoded = Vec::with_capacity(keys.len());
        for (hex_key, day) in &keys {
            decoded.push(parse_key(hex_key, *day)?);
        }
        self.inner.report_positive(covidcode, &decoded, report_day).map_err(runtime_err)
    }

    /// Matched code hexes for an account (empty list: no notification).
    fn poll_notifications(&mut self, account: u64) -> PyResult<Vec<String>> {
        let n = self.inner.poll_notifications(account).map_err(runtime_err)?;
        Ok(n.matched.iter().map(|c| c.hex()).collect())
    }
}

#[pymodule]
fn ctlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(derive_code, m)?)?;
    m.add_function(wrap_pyfunction!(epoch_of, m)?)?;
    m.add_function(wrap_pyfunction!(haversine_km, m)?)?;
    m.add_function(wrap_pyfunction!(admission_window, m)?)?;
    m.add_function(wrap_pyfunction!(fixture_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(run_pollution, m)?)?;
    m.add_function(wrap_pyfunction!(run_isolation, m)?)?;
    m.add_function(wrap_pyfunction!(detection_rate, m)?)?;
    m.add_class::<PyExposureServer>()?;
    Ok(())
}

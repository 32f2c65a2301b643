//! Command-line front end.
//!
//! Scenario files are TOML: placed scenarios list `[[device]]` tables,
//! population scenarios carry a `[population]` table with the sweep
//! parameter names used throughout the crate. Every run prints a JSON
//! report to stdout and, when `CTLAB_REPORT_DIR` is set, writes the same
//! bytes to `<dir>/<command>-<seed>.json`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::deanon;
use crate::error::ConfigError;
use crate::isolation::{self, IsolationParams};
use crate::poi;
use crate::pollution;
use crate::protocol::{EpochClock, ExposureParams};
use crate::report::{scenario_hash, RunReport};
use crate::server::ExposureServer;
use crate::world::population::{run_population, DeviceOverrides};
use crate::world::{
    engine, PlacedDevice, PollutionSettings, ScenarioConfig, ScenarioKind, Table6Params,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ctlab", about = "contact-tracing attack laboratory", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and dump the radio event log.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the event log CSV here (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Contact-isolation attack on a placed scenario.
    Isolate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Accounts per round.
        #[arg(long, default_value_t = 3)]
        pools: usize,
    },
    /// Contact-pollution (relay) attack on a placed scenario.
    Pollute {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tag-based deanonymization on a population scenario.
    Deanon {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional wardriving CSV (`ssid,lat,lon`) to locate identified tags.
        #[arg(long)]
        wardriving: Option<PathBuf>,
    },
    /// POI coverage estimation from a sensor CSV.
    Coverage {
        /// Sensor records; omit to use the bundled synthetic city.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        city: Option<String>,
        #[arg(long)]
        population: Option<f64>,
        #[arg(long, default_value_t = 0.3)]
        p: f64,
        #[arg(long, default_value_t = 5.0)]
        radius_km: f64,
    },
    /// Mean deanonymization detection rate over seeds, optionally pinning
    /// one infected-device parameter per sweep cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// One of: encounter_count, wifi_probing_frequency, speed.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values for --param.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
}

/// On-disk scenario schema.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub duration: f64,
    pub start_time: f64,
    pub r_bt: Option<f64>,
    pub r_wifi: Option<f64>,
    #[serde(rename = "device")]
    pub devices: Vec<PlacedDevice>,
    pub population: Option<Table6Params>,
    pub pollution: Option<PollutionSettings>,
    pub exposure: Option<ExposureParams>,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn into_config(self) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = match (self.population, self.devices.is_empty()) {
            (Some(params), true) => ScenarioConfig::population(params),
            (None, false) | (None, true) => {
                ScenarioConfig::placed(self.devices, self.duration)
            }
            (Some(_), false) => {
                return Err(ConfigError::invalid(
                    "population",
                    "a scenario is either placed devices or a population, not both",
                ))
            }
        };
        cfg.start_time = self.start_time;
        if let Some(r) = self.r_bt {
            cfg.r_bt = r;
        }
        if let Some(r) = self.r_wifi {
            cfg.r_wifi = r;
        }
        if let Some(p) = self.pollution {
            cfg.pollution = Some(p);
        }
        if let Some(e) = self.exposure {
            cfg.exposure = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Full contact-isolation pipeline on a placed scenario: simulate, let
/// the diagnosed devices report, then pool-test the attacker's contacts.
pub fn isolate_scenario(
    cfg: &ScenarioConfig,
    seed: u64,
    pools: usize,
) -> Result<serde_json::Value, String> {
    let sim = engine::run_scenario(cfg, seed).map_err(|e| e.to_string())?;

    let mut server = ExposureServer::new(cfg.clock);
    server.register_covidcode("cc-lab");
    let report_day = cfg.clock.day_of(cfg.start_time + cfg.duration);
    let mut keys = Vec::new();
    for id in &sim.ground_truth.diagnosed {
        keys.extend(sim.ground_truth.device_keys[id].iter().copied());
    }
    server.report_positive("cc-lab", &keys, report_day).map_err(|e| e.to_string())?;

    let attackers: Vec<u32> = match &cfg.kind {
        ScenarioKind::Placed(d) => d.iter().filter(|d| d.attacker).map(|d| d.id).collect(),
        _ => return Err("this command needs a placed scenario".into()),
    };
    let attacker = *attackers.first().ok_or("no attacker device in scenario")?;
    let sessions = isolation::collect_contacts(&sim, attacker);
    let params = IsolationParams { pools, max_rounds: 64 };
    let result =
        isolation::run_isolation(&mut server, &sessions, &params).map_err(|e| e.to_string())?;

    let identified_devices: BTreeSet<u32> = result
        .identified
        .iter()
        .filter_map(|&i| sim.ground_truth.mac_owner.get(&sessions[i].mac).copied())
        .collect();
    Ok(serde_json::json!({
        "contacts": sessions.len(),
        "rounds_used": result.rounds_used,
        "accounts_used": result.accounts_used,
        "identified_sessions": result.identified,
        "identified_devices": identified_devices,
        "complete": result.complete,
        "ambiguous": result.ambiguous,
    }))
}

fn emit(report: &RunReport) -> std::io::Result<()> {
    let bytes = report.to_bytes();
    use std::io::Write;
    std::io::stdout().write_all(&bytes)?;
    if std::env::var_os(crate::report::REPORT_DIR_ENV).is_some() {
        report.write(Path::new("."))?;
    }
    Ok(())
}

fn placed_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let cfg = ScenarioFile::load(path)?.into_config()?;
    if matches!(cfg.kind, ScenarioKind::Population(_)) {
        return Err(ConfigError::invalid("population", "this command needs a placed scenario"));
    }
    Ok(cfg)
}

fn population_params(path: &Path) -> Result<Table6Params, ConfigError> {
    let cfg = ScenarioFile::load(path)?.into_config()?;
    match cfg.kind {
        ScenarioKind::Population(p) => Ok(p),
        _ => Err(ConfigError::invalid("device", "this command needs a population scenario")),
    }
}

/// Runs the CLI; returns a process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Config(e)) => {
            eprintln!("configuration error: {e}");
            EXIT_CONFIG
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, seed, out } => {
            let file = ScenarioFile::load(&config)?;
            let cfg = file.into_config()?;
            let hash = scenario_hash(&cfg);
            let (events, summary) = match &cfg.kind {
                ScenarioKind::Placed(_) => {
                    let sim = engine::run_scenario(&cfg, seed)?;
                    let summary = serde_json::json!({
                        "events": sim.events.events.len(),
                        "devices_with_inbox": sim.inboxes.len(),
                    });
                    (sim.events, summary)
                }
                ScenarioKind::Population(params) => {
                    let sim = engine::run_population_exact(params, seed, &cfg.clock)?;
                    let summary = serde_json::json!({
                        "events": sim.events.events.len(),
                    });
                    (sim.events, summary)
                }
            };
            match out {
                Some(path) => {
                    let f = std::fs::File::create(&path)?;
                    events.to_csv(f).map_err(runtime)?;
                }
                None => events.to_csv(std::io::stdout()).map_err(runtime)?,
            }
            emit(&RunReport::new("simulate", seed, hash, summary))?;
            Ok(())
        }
        Command::Isolate { config, seed, pools } => {
            let cfg = placed_config(&config)?;
            let hash = scenario_hash(&cfg);
            let results = isolate_scenario(&cfg, seed, pools).map_err(runtime)?;
            emit(&RunReport::new("isolate", seed, hash, results))?;
            Ok(())
        }
        Command::Pollute { config, seed } => {
            let cfg = placed_config(&config)?;
            let hash = scenario_hash(&cfg);
            let report = pollution::run_pollution(&cfg, seed)?;
            let results = serde_json::to_value(&report).map_err(runtime)?;
            emit(&RunReport::new("pollute", seed, hash, results))?;
            Ok(())
        }
        Command::Deanon { config, seed, wardriving } => {
            let params = population_params(&config)?;
            let hash = scenario_hash(&params);
            let clock = EpochClock::default();
            let out = run_population(&params, seed, &clock)?;
            let window =
                deanon::admission_window(params.r_wifi, params.r_bt, params.mean_speed())
                    .map_err(runtime)?;
            let score = deanon::score_population(&out, window);

            let locator = match wardriving {
                Some(path) => {
                    let f = std::fs::File::open(&path)?;
                    Some(deanon::SsidLocator::from_csv(f).map_err(runtime)?)
                }
                None => None,
            };
            let pairs = deanon::collect_pairs(&out.observations, window);
            let matched = deanon::match_tags(&pairs, &out.ground_truth.infected_macs());
            let located: Vec<serde_json::Value> = matched
                .candidates
                .iter()
                .map(|tag| {
                    let loc = locator.as_ref().and_then(|l| l.locate(&tag.ssid));
                    serde_json::json!({ "ssid": tag.ssid, "location": loc })
                })
                .collect();
            let results = serde_json::json!({
                "window_s": window,
                "score": score,
                "candidate_tags": matched.candidates.len(),
                "located": located,
            });
            emit(&RunReport::new("deanon", seed, hash, results))?;
            Ok(())
        }
        Command::Coverage { csv, city, population, p, radius_km } => {
            let (records, default_pop) = match csv {
                Some(path) => {
                    let f = std::fs::File::open(&path)?;
                    (poi::read_poi_csv(f).map_err(runtime)?, None)
                }
                None => {
                    let (records, pop) = poi::synthetic_city_fixture();
                    (records, Some(pop))
                }
            };
            let filtered: Vec<&poi::PoiRecord> = match &city {
                Some(c) => poi::filter_city(&records, c).map_err(runtime)?,
                None => records.iter().collect(),
            };
            let population = population
                .or(default_pop)
                .ok_or_else(|| ConfigError::invalid("population", "required with --csv"))?;
            let coverage = poi::estimate_coverage(&filtered, population, p, radius_km)
                .map_err(runtime)?;
            let results = serde_json::json!({
                "sensors": filtered.len(),
                "population": population,
                "p": p,
                "radius_km": radius_km,
                "coverage": coverage,
                "day_overlap": poi::day_overlap(&filtered),
                "visit_frequency": poi::visit_frequency(&filtered),
            });
            emit(&RunReport::new("coverage", 0, scenario_hash(&results), results))?;
            Ok(())
        }
        Command::Sweep { config, seeds, param, values } => {
            let params = population_params(&config)?;
            let hash = scenario_hash(&params);
            let clock = EpochClock::default();
            let window =
                deanon::admission_window(params.r_wifi, params.r_bt, params.mean_speed())
                    .map_err(runtime)?;

            let cells: Vec<(Option<f64>, DeviceOverrides)> = match (&param, values.is_empty()) {
                (None, _) => vec![(None, DeviceOverrides::default())],
                (Some(_), true) => {
                    return Err(ConfigError::invalid("values", "required with --param").into())
                }
                (Some(name), false) => values
                    .iter()
                    .map(|&v| {
                        let mut o = DeviceOverrides::default();
                        match name.as_str() {
                            "encounter_count" => o.encounter_count = Some(v as u32),
                            "wifi_probing_frequency" => o.wifi_probing_frequency = Some(v),
                            "speed" => o.speed = Some(v),
                            _ => {}
                        }
                        Ok::<_, ConfigError>((Some(v), o))
                    })
                    .collect::<Result<_, _>>()?,
            };
            if let Some(name) = &param {
                if !matches!(
                    name.as_str(),
                    "encounter_count" | "wifi_probing_frequency" | "speed"
                ) {
                    return Err(ConfigError::invalid(
                        "param",
                        "expected encounter_count, wifi_probing_frequency, or speed",
                    )
                    .into());
                }
            }

            let mut rows = Vec::new();
            for (value, overrides) in &cells {
                let mut total = 0.0;
                for seed in 0..seeds {
                    let out = crate::world::population::run_population_with(
                        &params, seed, &clock, overrides,
                    )?;
                    total += deanon::score_population(&out, window).detection_rate;
                }
                rows.push(serde_json::json!({
                    "param": param,
                    "value": value,
                    "seeds": seeds,
                    "mean_detection_rate": total / seeds.max(1) as f64,
                }));
            }
            let results = serde_json::json!({ "cells": rows });
            emit(&RunReport::new("sweep", 0, hash, results))?;
            Ok(())
        }
    }
}

//! A desk-scale laboratory for attacks on decentralized contact-tracing
//! protocols: a seeded radio-world simulator, a loopback exposure server,
//! and implementations of the contact-isolation, contact-pollution, and
//! tag-based deanonymization attacks, plus POI-coverage estimation from
//! WiFi sensor data.

pub mod cli;
pub mod deanon;
pub mod error;
pub mod isolation;
pub mod poi;
pub mod pollution;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod server;
pub mod wire;
pub mod world;

pub use error::{AttackError, ConfigError, PoiError, ProtocolError, ServerError};

//! JSON-lines façade over [`ExposureServer`]: one request object per line,
//! one response object per line. A loopback TCP listener wraps the same
//! handler so clients can exercise the server over a real socket.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};

use serde::{Deserialize, Serialize};

use crate::protocol::{EncounterCode, TemporaryKey};
use crate::server::{ExposureServer, NotificationSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    CreateAccount { source_addr: String },
    UploadRecords { account: u64, codes: Vec<WireCode> },
    ReportPositive { covidcode: String, keys: Vec<WireKey>, report_day: u64 },
    PollNotifications { account: u64 },
    RegisterCovidcode { covidcode: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Response {
    Ok {
        #[serde(skip_serializing_if = "Option::is_none")]
        account: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        inserted: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        notifications: Option<WireNotifications>,
    },
    Error { message: String },
}

impl Response {
    fn ok() -> Self {
        Response::Ok { account: None, inserted: None, notifications: None }
    }

    fn err(message: impl Into<String>) -> Self {
        Response::Error { message: message.into() }
    }
}

/// Hex-encoded encounter code plus its epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireCode {
    pub id: String,
    pub epoch: u64,
}

impl WireCode {
    pub fn from_code(code: &EncounterCode) -> Self {
        Self { id: code.hex(), epoch: code.epoch_index }
    }

    pub fn to_code(&self) -> Result<EncounterCode, String> {
        let bytes = hex::decode(&self.id).map_err(|e| e.to_string())?;
        let id_bytes: [u8; 16] =
            bytes.try_into().map_err(|_| "code must be 16 bytes".to_string())?;
        Ok(EncounterCode { id_bytes, epoch_index: self.epoch })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireKey {
    pub key: String,
    pub day: u64,
}

impl WireKey {
    pub fn from_key(key: &TemporaryKey) -> Self {
        Self { key: hex::encode(key.key_bytes), day: key.day_index }
    }

    pub fn to_key(&self) -> Result<TemporaryKey, String> {
        let bytes = hex::decode(&self.key).map_err(|e| e.to_string())?;
        let key_bytes: [u8; 16] =
            bytes.try_into().map_err(|_| "key must be 16 bytes".to_string())?;
        Ok(TemporaryKey { key_bytes, day_index: self.day })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireNotifications {
    pub notified: bool,
    pub matched: Vec<WireCode>,
}

impl From<NotificationSet> for WireNotifications {
    fn from(n: NotificationSet) -> Self {
        Self {
            notified: n.notified(),
            matched: n.matched.iter().map(WireCode::from_code).collect(),
        }
    }
}

/// Handles one request line, returning one response line (no newline).
pub fn handle_line(server: &mut ExposureServer, line: &str) -> String {
    let response = match serde_json::from_str::<Request>(line) {
        Ok(req) => handle_request(server, req),
        Err(e) => Response::err(format!("bad request: {e}")),
    };
    serde_json::to_string(&response).expect("response serializes")
}

fn handle_request(server: &mut ExposureServer, req: Request) -> Response {
    match req {
        Request::CreateAccount { source_addr } => match server.create_account(&source_addr) {
            Ok(id) => Response::Ok { account: Some(id), inserted: None, notifications: None },
            Err(e) => Response::err(e.to_string()),
        },
        Request::UploadRecords { account, codes } => {
            let mut decoded = Vec::with_capacity(codes.len());
            for c in &codes {
                match c.to_code() {
                    Ok(code) => decoded.push(code),
                    Err(e) => return Response::err(e),
                }
            }
            match server.upload_records(account, &decoded) {
                Ok(()) => Response::ok(),
                Err(e) => Response::err(e.to_string()),
            }
        }
        Request::ReportPositive { covidcode, keys, report_day } => {
            let mut decoded = Vec::with_capacity(keys.len());
            for k in &keys {
                match k.to_key() {
                    Ok(key) => decoded.push(key),
                    Err(e) => return Response::err(e),
                }
            }
            match server.report_positive(&covidcode, &decoded, report_day) {
                Ok(n) => {
                    Response::Ok { account: None, inserted: Some(n), notifications: None }
                }
                Err(e) => Response::err(e.to_string()),
            }
        }
        Request::PollNotifications { account } => match server.poll_notifications(account) {
            Ok(n) => Response::Ok {
                account: None,
                inserted: None,
                notifications: Some(n.into()),
            },
            Err(e) => Response::err(e.to_string()),
        },
        Request::RegisterCovidcode { covidcode } => {
            server.register_covidcode(covidcode);
            Response::ok()
        }
    }
}

/// Serves the JSON-lines protocol on a loopback listener until the stream
/// closes. One connection at a time; intended for tests and local use.
pub fn serve(server: &mut ExposureServer, listener: &TcpListener) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        if serve_stream(server, stream)? {
            break;
        }
    }
    Ok(())
}

/// Returns Ok(true) when the client sent a `shutdown` line.
fn serve_stream(server: &mut ExposureServer, stream: TcpStream) -> std::io::Result<bool> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim() == "shutdown" {
            return Ok(true);
        }
        if line.trim().is_empty() {
            continue;
        }
        writeln!(writer, "{}", handle_line(server, &line))?;
    }
    Ok(false)
}

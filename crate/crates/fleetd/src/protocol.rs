use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};

use serde::{Deserialize, Serialize};
use serde_json::json;

use contextnav::embedstore::EmbeddingRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRecord {
    pub frame_id: u64,
    pub scene: String,
    pub vector: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_scores: Option<BTreeMap<String, f64>>,
}

impl From<WireRecord> for EmbeddingRecord<f32> {
    fn from(w: WireRecord) -> Self {
        EmbeddingRecord {
            frame_id: w.frame_id,
            vector: w.vector,
            scene_id: w.scene,
            pose: w.pose,
            category_scores: w.category_scores,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum WireRequest {
    Ingest {
        #[serde(default)]
        records: Vec<WireRecord>,
    },
    /// The query vector is normalized by the server.
    Query {
        scene: String,
        vector: Vec<f32>,
        k: usize,
    },
    Stats {},
}

/// One response line. Fields not relevant to the request are omitted.
///
/// `version` is the number of records in the snapshot the request saw
/// (for ingest: right after the batch was committed).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Response {
    pub request_id: Option<String>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<Vec<(u64, f32)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenes: Option<BTreeMap<String, usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<usize>,
}

impl Response {
    pub fn error(request_id: Option<String>, msg: impl Into<String>) -> Self {
        Self {
            request_id,
            ok: false,
            error: Some(msg.into()),
            ..Self::default()
        }
    }
}

/// Blocking client over one connection.
#[derive(Debug)]
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            next_id: 0,
        })
    }

    /// Send one raw line (a newline is appended) and read the response.
    pub fn send_line(&mut self, line: &str) -> io::Result<Response> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "server closed the connection",
            ));
        }
        serde_json::from_str(&buf).map_err(io::Error::from)
    }

    pub fn call(&mut self, request: &WireRequest) -> io::Result<Response> {
        self.next_id += 1;
        let mut v = serde_json::to_value(request)?;
        v["request_id"] = json!(self.next_id.to_string());
        self.send_line(&v.to_string())
    }

    pub fn ingest(&mut self, records: Vec<WireRecord>) -> io::Result<Response> {
        self.call(&WireRequest::Ingest { records })
    }

    pub fn query(&mut self, scene: &str, vector: Vec<f32>, k: usize) -> io::Result<Response> {
        self.call(&WireRequest::Query {
            scene: scene.to_string(),
            vector,
            k,
        })
    }

    pub fn stats(&mut self) -> io::Result<Response> {
        self.call(&WireRequest::Stats {})
    }
}

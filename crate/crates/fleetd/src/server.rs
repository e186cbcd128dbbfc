use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use parking_lot::Mutex;
use thiserror::Error;

use contextnav::embedstore::{EmbeddingRecord, SharedStore, Store, StoreError};
use contextnav::remb::{join_records, AppendLog, FormatError, RembRecord, SidecarEntry};
use contextnav::scalar::normalized;

use crate::protocol::{Response, WireRecord, WireRequest};

pub const LOG_FILE: &str = "fleet.remb";
pub const SIDECAR_FILE: &str = "fleet.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub dim: usize,
    /// Directory holding the append log. `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    /// fsync the log before every acknowledgement.
    pub sync: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            data_dir: None,
            sync: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Request handling, independent of the transport.
#[derive(Debug)]
pub struct Service {
    store: SharedStore<f32>,
    /// The writer lock. Held for validation, log append and publication.
    log: Mutex<Option<AppendLog>>,
}

impl Service {
    /// Open the service, replaying any existing log in `cfg.data_dir`.
    pub fn open(cfg: &ServerConfig) -> Result<Self, ServiceError> {
        let mut store = Store::new(cfg.dim)?;
        let log = match &cfg.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let (log, records, entries) =
                    AppendLog::open(&dir.join(LOG_FILE), &dir.join(SIDECAR_FILE), cfg.dim, cfg.sync)?;
                store.add_batch(join_records(records, entries)?)?;
                log::info!("replayed {} records from {}", store.len(), dir.display());
                Some(log)
            }
            None => None,
        };
        Ok(Self {
            store: SharedStore::new(store),
            log: Mutex::new(log),
        })
    }

    pub fn store(&self) -> &SharedStore<f32> {
        &self.store
    }

    /// Commit a batch. Returns the store size right after it.
    pub fn ingest(&self, records: Vec<WireRecord>) -> Result<u64, ServiceError> {
        let mut log = self.log.lock();
        let batch: Vec<EmbeddingRecord<f32>> = records.into_iter().map(Into::into).collect();
        if batch.is_empty() {
            return Ok(self.store.len() as u64);
        }
        self.store.read(|s| s.validate_batch(&batch))?;
        if let Some(log) = log.as_mut() {
            let (remb, side): (Vec<_>, Vec<_>) = batch
                .iter()
                .map(|r| {
                    (
                        RembRecord {
                            frame_id: r.frame_id,
                            vector: r.vector.clone(),
                        },
                        SidecarEntry {
                            frame_id: r.frame_id,
                            scene: r.scene_id.clone(),
                            pose: r.pose,
                            category_scores: r.category_scores.clone(),
                        },
                    )
                })
                .unzip();
            log.append(&remb, &side)?;
        }
        Ok(self.store.append_batch(batch)?.end as u64)
    }

    pub fn handle(&self, request: WireRequest, request_id: Option<String>) -> Response {
        match request {
            WireRequest::Ingest { records } => {
                let n = records.len();
                match self.ingest(records) {
                    Ok(version) => Response {
                        request_id,
                        ok: true,
                        version: Some(version),
                        accepted_count: Some(n),
                        ..Response::default()
                    },
                    Err(e) => Response::error(request_id, e.to_string()),
                }
            }
            WireRequest::Query { scene, vector, k } => {
                let Some(unit) = normalized(&vector) else {
                    return Response::error(request_id, "query vector must be non-zero and finite");
                };
                let out = self.store.read(|s| {
                    s.topk(&scene, &unit, k).map(|hits| {
                        let results = hits.into_iter().map(|(i, score)| (s.frame_id(i), score)).collect();
                        (s.len() as u64, results)
                    })
                });
                match out {
                    Ok((version, results)) => Response {
                        request_id,
                        ok: true,
                        version: Some(version),
                        results: Some(results),
                        ..Response::default()
                    },
                    Err(e) => Response::error(request_id, e.to_string()),
                }
            }
            WireRequest::Stats {} => {
                let (version, scenes) = self.store.read(|s| (s.len(), s.scene_counts()));
                Response {
                    request_id,
                    ok: true,
                    version: Some(version as u64),
                    scenes: Some(scenes),
                    total: Some(version),
                    ..Response::default()
                }
            }
        }
    }

    /// Parse and answer one request line.
    pub fn handle_line(&self, line: &str) -> Response {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return Response::error(None, format!("malformed request: {e}")),
        };
        let request_id = match value.get("request_id") {
            Some(serde_json::Value::String(s)) => Some(s.clone()),
            Some(serde_json::Value::Null) | None => None,
            Some(other) => Some(other.to_string()),
        };
        match serde_json::from_value::<WireRequest>(value) {
            Ok(req) => self.handle(req, request_id),
            Err(e) => Response::error(request_id, format!("invalid request: {e}")),
        }
    }

    fn serve_connection(&self, stream: TcpStream) -> io::Result<()> {
        stream.set_nodelay(true)?;
        let mut writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let mut buf = Vec::new();
        loop {
            buf.clear();
            if reader.read_until(b'\n', &mut buf)? == 0 {
                return Ok(());
            }
            let response = match std::str::from_utf8(&buf) {
                Ok(line) if line.trim().is_empty() => continue,
                Ok(line) => self.handle_line(line),
                Err(_) => Response::error(None, "request is not valid UTF-8"),
            };
            let mut out = serde_json::to_vec(&response).map_err(io::Error::from)?;
            out.push(b'\n');
            writer.write_all(&out)?;
        }
    }
}

/// TCP front end: one thread per connection.
#[derive(Debug)]
pub struct Server {
    listener: TcpListener,
    service: Arc<Service>,
    stop: Arc<AtomicBool>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, service: Service) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            service: Arc::new(service),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn service(&self) -> &Arc<Service> {
        &self.service
    }

    /// Accept connections until stopped.
    pub fn run(self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let service = Arc::clone(&self.service);
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = service.serve_connection(stream) {
                    log::debug!("connection {peer:?} ended: {e}");
                }
            });
        }
        Ok(())
    }

    /// Run on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let service = Arc::clone(&self.service);
        let join = thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            stop,
            service,
            join: Some(join),
        })
    }
}

#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    service: Arc<Service>,
    join: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn service(&self) -> &Arc<Service> {
        &self.service
    }

    /// Stop accepting connections and wait for the accept loop to exit.
    /// Open connections are served until their clients hang up.
    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop_accepting()
    }

    fn stop_accepting(&mut self) -> io::Result<()> {
        if let Some(join) = self.join.take() {
            self.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(self.addr);
            join.join().map_err(|_| io::Error::other("server thread panicked"))??;
        }
        Ok(())
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_accepting();
    }
}

//! Line-delimited JSON wire protocol: a client that satisfies the
//! classifier contract by delegating to a remote inference process, and
//! the matching server loop.
//!
//! One JSON document per line, UTF-8, floats in decimal notation.
//! Handshake first: `{"op":"hello"}` is answered with the model's input
//! shape and class count; after that each `classify` request carries an
//! id that the response echoes verbatim.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Classifier, ModelError, ModelResult, Shape};
use crate::types::{Image, Prediction};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum WireRequest {
    Hello,
    Classify { id: u64, data: Vec<f64> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum WireResponse {
    Hello { shape: [usize; 3], classes: usize },
    Probs { id: u64, probs: Vec<f64> },
    Error { id: u64, message: String },
}

/// Client for a remote classifier. Requests on one connection are
/// serialized through an internal lock; the harness opens one client per
/// worker when it wants parallel inference.
pub struct RemoteClassifier {
    shape: Shape,
    num_classes: usize,
    conn: Mutex<Connection>,
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl Connection {
    fn send(&mut self, request: &WireRequest) -> ModelResult<()> {
        let mut line = serde_json::to_string(request)
            .map_err(|e| ModelError::MalformedResponse(format!("encode: {e}")))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    fn receive(&mut self) -> ModelResult<WireResponse> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).map_err(|e| {
            if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) {
                ModelError::Timeout
            } else {
                ModelError::Io(e)
            }
        })?;
        if n == 0 {
            return Err(ModelError::MalformedResponse(
                "connection closed by server".into(),
            ));
        }
        serde_json::from_str(line.trim_end())
            .map_err(|e| ModelError::MalformedResponse(e.to_string()))
    }
}

impl RemoteClassifier {
    /// Connects, performs the handshake, and adopts the advertised input
    /// shape and class count.
    pub fn connect(addr: &str, timeout: Duration) -> ModelResult<Self> {
        let sock_addr: SocketAddr = addr
            .parse()
            .map_err(|e| ModelError::Handshake(format!("bad address {addr}: {e}")))?;
        let stream = TcpStream::connect_timeout(&sock_addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        let mut conn = Connection {
            reader,
            writer: stream,
            next_id: 1,
        };
        conn.send(&WireRequest::Hello)?;
        match conn.receive()? {
            WireResponse::Hello { shape, classes } => Ok(Self {
                shape: Shape {
                    channels: shape[0],
                    height: shape[1],
                    width: shape[2],
                },
                num_classes: classes,
                conn: Mutex::new(conn),
            }),
            WireResponse::Error { message, .. } => Err(ModelError::Handshake(message)),
            other => Err(ModelError::Handshake(format!(
                "unexpected handshake response: {other:?}"
            ))),
        }
    }
}

impl Classifier for RemoteClassifier {
    fn classify(&self, x: &Image) -> ModelResult<Prediction> {
        super::check_shape(self.shape, x)?;
        let mut conn = self.conn.lock().expect("remote connection lock");
        let id = conn.next_id;
        conn.next_id += 1;
        conn.send(&WireRequest::Classify {
            id,
            data: x.data().to_vec(),
        })?;
        match conn.receive()? {
            WireResponse::Probs { id: got, probs } => {
                if got != id {
                    return Err(ModelError::IdMismatch { expected: id, got });
                }
                if probs.len() != self.num_classes {
                    return Err(ModelError::MalformedResponse(format!(
                        "expected {} probabilities, got {}",
                        self.num_classes,
                        probs.len()
                    )));
                }
                Prediction::from_probs(probs).map_err(ModelError::InvalidProbs)
            }
            WireResponse::Error { id: got, message } => {
                if got != id {
                    return Err(ModelError::IdMismatch { expected: id, got });
                }
                Err(ModelError::ServerError(message))
            }
            WireResponse::Hello { .. } => Err(ModelError::MalformedResponse(
                "hello response to classify request".into(),
            )),
        }
    }

    fn input_shape(&self) -> Shape {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Serves the wire protocol over one byte stream until EOF. Usable over
/// TCP or stdio.
pub fn serve_connection<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    model: &dyn Classifier,
) -> io::Result<()> {
    let shape = model.input_shape();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<WireRequest>(&line) {
            Ok(WireRequest::Hello) => WireResponse::Hello {
                shape: [shape.channels, shape.height, shape.width],
                classes: model.num_classes(),
            },
            Ok(WireRequest::Classify { id, data }) => {
                match Image::new_checked(shape.channels, shape.height, shape.width, data)
                    .map_err(ModelError::from)
                    .and_then(|x| model.classify(&x))
                {
                    Ok(prediction) => WireResponse::Probs {
                        id,
                        probs: prediction.probs().to_vec(),
                    },
                    Err(e) => WireResponse::Error {
                        id,
                        message: e.to_string(),
                    },
                }
            }
            Err(e) => WireResponse::Error {
                id: 0,
                message: format!("unparseable request: {e}"),
            },
        };
        let mut out = serde_json::to_string(&response)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        out.push('\n');
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// A TCP server running on a background thread, one thread per
/// connection. Used by the CLI `serve-model` command and by tests.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting new connections and joins the accept loop.
    pub fn stop(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // unblock the accept call
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

/// Binds `addr` (use port 0 for an ephemeral port) and serves `model`
/// until the handle is stopped or dropped.
pub fn spawn_server(model: Arc<dyn Classifier>, addr: &str) -> ModelResult<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let accept_shutdown = Arc::clone(&shutdown);
    let accept_thread = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if accept_shutdown.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let model = Arc::clone(&model);
            // detached: a connection thread ends when its client hangs up
            std::thread::spawn(move || {
                let reader = BufReader::new(match stream.try_clone() {
                    Ok(s) => s,
                    Err(_) => return,
                });
                let _ = serve_connection(reader, stream, model.as_ref());
            });
        }
    });
    Ok(ServerHandle {
        addr,
        shutdown,
        accept_thread: Some(accept_thread),
    })
}

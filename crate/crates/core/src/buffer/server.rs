//! TCP line protocol in front of an [`OnlineBuffer`].
//!
//! Each request is one line. A bare wire record is a push. Other requests
//! carry an `op` field:
//!
//! ```text
//! {"op":"push","entry":{..record..}}     -> {"seq":n}
//! {"op":"sample","batch_size":k,"seed":s} -> {"entries":[..records..]}
//! {"op":"stats"}                          -> {"size":..,"capacity":..,"last_seq":..,"evicted":..}
//! ```
//!
//! Failures answer `{"error":kind,"reason":text}` and leave the connection
//! open. One thread serves each connection.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{wire, BufferError, OnlineBuffer};
use crate::types::BufferEntry;

/// Longest accepted request line.
pub const MAX_LINE_BYTES: usize = 16 << 20;

/// A decoded server response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Ack { seq: u64 },
    Entries { entries: Vec<BufferEntry> },
    Stats {
        size: usize,
        capacity: usize,
        last_seq: u64,
        evicted: u64,
    },
    Nack { error: String, reason: String },
}

fn nack(kind: &str, reason: impl ToString) -> Value {
    json!({ "error": kind, "reason": reason.to_string() })
}

#[derive(Debug, Deserialize)]
struct SampleRequest {
    batch_size: usize,
    #[serde(default)]
    seed: u64,
}

pub struct BufferServer {
    listener: TcpListener,
    buffer: Arc<OnlineBuffer>,
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting new connections. Connections already open keep
    /// being served until their peers hang up.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.join.is_some() {
            self.stop_accepting();
        }
    }
}

impl BufferServer {
    pub fn bind(addr: impl ToSocketAddrs, buffer: Arc<OnlineBuffer>) -> io::Result<Self> {
        Ok(BufferServer {
            listener: TcpListener::bind(addr)?,
            buffer,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accept loop on the calling thread; never returns unless accept fails.
    pub fn serve(self) -> io::Result<()> {
        let stop = Arc::new(AtomicBool::new(false));
        self.accept_loop(&stop);
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let join = thread::Builder::new()
            .name("buffer-accept".into())
            .spawn(move || self.accept_loop(&flag))?;
        Ok(ServerHandle {
            addr,
            stop,
            join: Some(join),
        })
    }

    fn accept_loop(&self, stop: &AtomicBool) {
        for stream in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            match stream {
                Ok(stream) => {
                    let buffer = self.buffer.clone();
                    let peer = stream.peer_addr().ok();
                    let spawned = thread::Builder::new()
                        .name("buffer-conn".into())
                        .spawn(move || {
                            if let Err(e) = handle_connection(stream, &buffer) {
                                tracing::debug!(?peer, "connection closed: {e}");
                            }
                        });
                    if let Err(e) = spawned {
                        tracing::warn!("cannot spawn connection thread: {e}");
                    }
                }
                Err(e) => tracing::warn!("accept failed: {e}"),
            }
        }
    }
}

/// Reads one line of at most `MAX_LINE_BYTES`. Returns `Ok(None)` at EOF and
/// `Ok(Some(Err(())))` for an over-long line, which is consumed and dropped.
fn read_line<R: BufRead>(r: &mut R, buf: &mut Vec<u8>) -> io::Result<Option<Result<(), ()>>> {
    buf.clear();
    let mut too_long = false;
    loop {
        let chunk = r.fill_buf()?;
        if chunk.is_empty() {
            return Ok(if buf.is_empty() && !too_long {
                None
            } else if too_long {
                Some(Err(()))
            } else {
                Some(Ok(()))
            });
        }
        let (used, done) = match chunk.iter().position(|&b| b == b'\n') {
            Some(i) => (i + 1, true),
            None => (chunk.len(), false),
        };
        if !too_long {
            if buf.len() + used > MAX_LINE_BYTES {
                too_long = true;
                buf.clear();
            } else {
                buf.extend_from_slice(&chunk[..used]);
            }
        }
        r.consume(used);
        if done {
            return Ok(Some(if too_long { Err(()) } else { Ok(()) }));
        }
    }
}

fn handle_connection(stream: TcpStream, buffer: &OnlineBuffer) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut line = Vec::new();
    while let Some(read) = read_line(&mut reader, &mut line)? {
        let reply = match read {
            Err(()) => nack("too_long", format!("line exceeds {MAX_LINE_BYTES} bytes")),
            Ok(()) => {
                let text = String::from_utf8_lossy(&line);
                let text = text.trim();
                if text.is_empty() {
                    continue;
                }
                dispatch(text, buffer)
            }
        };
        serde_json::to_writer(&mut writer, &reply)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

fn push_reply(entry: BufferEntry, buffer: &OnlineBuffer) -> Value {
    match buffer.push(entry) {
        Ok(seq) => {
            tracing::info!(seq, "push accepted");
            json!({ "seq": seq })
        }
        Err(BufferError::ValidationFailed(reason)) => nack("validation", reason),
        Err(e) => nack("internal", e),
    }
}

fn dispatch(text: &str, buffer: &OnlineBuffer) -> Value {
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return nack("parse", e),
    };
    let op = value.get("op").and_then(Value::as_str).map(str::to_owned);
    match op.as_deref() {
        None => match serde_json::from_value::<BufferEntry>(value) {
            Ok(entry) => push_reply(entry, buffer),
            Err(e) => nack("parse", e),
        },
        Some("push") => match value.get("entry").cloned().map(serde_json::from_value) {
            Some(Ok(entry)) => push_reply(entry, buffer),
            Some(Err(e)) => nack("parse", e),
            None => nack("parse", "push requires an entry"),
        },
        Some("sample") => match serde_json::from_value::<SampleRequest>(value) {
            Ok(req) => match buffer.sample(req.batch_size, req.seed) {
                Ok(entries) => json!({ "entries": entries }),
                Err(BufferError::EmptyBuffer) => nack("empty", "buffer is empty"),
                Err(e) => nack("internal", e),
            },
            Err(e) => nack("parse", e),
        },
        Some("stats") => {
            let s = buffer.stats();
            json!({
                "size": s.size,
                "capacity": s.capacity,
                "last_seq": s.last_seq,
                "evicted": s.evicted,
            })
        }
        Some(other) => nack("op", format!("unknown op {other:?}")),
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad reply: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("server refused ({error}): {reason}")]
    Refused { error: String, reason: String },
    #[error("connection closed by server")]
    Closed,
    #[error("unexpected reply {0:?}")]
    Unexpected(Reply),
}

/// Blocking client for the line protocol.
pub struct BufferClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl BufferClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(BufferClient {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    /// Sends one raw line and returns the raw reply line.
    pub fn request_raw(&mut self, line: &str) -> Result<String, ClientError> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(ClientError::Closed);
        }
        Ok(reply)
    }

    pub fn request(&mut self, line: &str) -> Result<Reply, ClientError> {
        let raw = self.request_raw(line)?;
        match serde_json::from_str::<Reply>(&raw)? {
            Reply::Nack { error, reason } => Err(ClientError::Refused { error, reason }),
            other => Ok(other),
        }
    }

    pub fn push(&mut self, entry: &BufferEntry) -> Result<u64, ClientError> {
        match self.request(&wire::encode(entry))? {
            Reply::Ack { seq } => Ok(seq),
            other => Err(ClientError::Unexpected(other)),
        }
    }

    pub fn sample(&mut self, batch_size: usize, seed: u64) -> Result<Vec<BufferEntry>, ClientError> {
        let req = json!({ "op": "sample", "batch_size": batch_size, "seed": seed }).to_string();
        match self.request(&req)? {
            Reply::Entries { entries } => Ok(entries),
            other => Err(ClientError::Unexpected(other)),
        }
    }

    pub fn stats(&mut self) -> Result<super::BufferStats, ClientError> {
        match self.request(r#"{"op":"stats"}"#)? {
            Reply::Stats {
                size,
                capacity,
                last_seq,
                evicted,
            } => Ok(super::BufferStats {
                size,
                capacity,
                last_seq,
                evicted,
            }),
            other => Err(ClientError::Unexpected(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::tests::entry;

    fn start(capacity: usize) -> (Arc<OnlineBuffer>, ServerHandle) {
        let buffer = Arc::new(OnlineBuffer::new(capacity).unwrap());
        let handle = BufferServer::bind("127.0.0.1:0", buffer.clone())
            .unwrap()
            .spawn()
            .unwrap();
        (buffer, handle)
    }

    #[test]
    fn ack_then_nack_then_ack() {
        let (buffer, handle) = start(8);
        let mut c = BufferClient::connect(handle.local_addr()).unwrap();
        assert_eq!(c.push(&entry("a")).unwrap(), 1);

        let line = wire::encode(&entry("b"));
        let raw = c.request_raw(&line[..line.len() / 2]).unwrap();
        let v: Value = serde_json::from_str(&raw).unwrap();
        assert_eq!(v["error"], "parse");

        assert_eq!(c.push(&entry("c")).unwrap(), 2);
        assert_eq!(buffer.len(), 2);
        handle.shutdown();
    }

    #[test]
    fn sample_and_stats_over_the_wire() {
        let (buffer, handle) = start(8);
        let mut c = BufferClient::connect(handle.local_addr()).unwrap();
        assert!(matches!(c.sample(2, 0), Err(ClientError::Refused { .. })));
        for i in 0..4 {
            c.push(&entry(&i.to_string())).unwrap();
        }
        let remote = c.sample(3, 42).unwrap();
        assert_eq!(remote, buffer.sample(3, 42).unwrap());
        let s = c.stats().unwrap();
        assert_eq!((s.size, s.capacity, s.last_seq), (4, 8, 4));

        let raw = c.request_raw(r#"{"op":"fly"}"#).unwrap();
        assert!(raw.contains("\"op\""));
        let mut bad = entry("x");
        bad.candidate.logprobs = None;
        let raw = c.request_raw(&json!({"op": "push", "entry": bad}).to_string()).unwrap();
        assert!(raw.contains("validation"));
    }

    #[test]
    fn two_producers_get_dense_seqs() {
        let (buffer, handle) = start(2000);
        let addr = handle.local_addr();
        let mut all: Vec<u64> = thread::scope(|s| {
            let workers: Vec<_> = (0..2)
                .map(|p| {
                    s.spawn(move || {
                        let mut c = BufferClient::connect(addr).unwrap();
                        (0..500)
                            .map(|i| c.push(&entry(&format!("{p}_{i}"))).unwrap())
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            workers.into_iter().flat_map(|w| w.join().unwrap()).collect()
        });
        all.sort();
        assert_eq!(all, (1..=1000).collect::<Vec<u64>>());
        assert_eq!(buffer.stats().last_seq, 1000);
    }

    #[test]
    fn over_long_line_is_refused() {
        let mut input: &[u8] = b"short\n";
        let mut buf = Vec::new();
        assert_eq!(read_line(&mut input, &mut buf).unwrap(), Some(Ok(())));
        assert_eq!(buf, b"short\n");
        let long = vec![b'x'; MAX_LINE_BYTES + 10];
        let mut data = long.clone();
        data.extend_from_slice(b"\nnext\n");
        let mut r = &data[..];
        assert_eq!(read_line(&mut r, &mut buf).unwrap(), Some(Err(())));
        assert_eq!(read_line(&mut r, &mut buf).unwrap(), Some(Ok(())));
        assert_eq!(buf, b"next\n");
        assert_eq!(read_line(&mut r, &mut buf).unwrap(), None);
    }
}

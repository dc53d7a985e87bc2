//! Framed TCP echo server and closed-loop measurement client.
//!
//! A frame is an 8-byte little-endian payload length followed by the
//! payload. When a payload is at least 8 bytes long its first 8 bytes carry
//! the client's sequence number, which the server copies into the response.

use std::io::{self, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, warn};

pub const MAX_FRAME: u64 = 256 << 20;
pub const SAMPLES_CSV_HEADER: &str = "size_bytes,seq,duration_ns";

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("frame of {len} bytes exceeds the {max} byte limit")]
    FrameTooLarge { len: u64, max: u64 },
    #[error("response mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Size of the response payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseRule {
    Echo,
    Fixed(u64),
}

impl ResponseRule {
    pub fn response_len(self, request_len: u64) -> u64 {
        match self {
            ResponseRule::Echo => request_len,
            ResponseRule::Fixed(n) => n,
        }
    }
}

impl FromStr for ResponseRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "echo" {
            return Ok(ResponseRule::Echo);
        }
        s.strip_prefix("fixed:")
            .and_then(|n| n.trim().parse().ok())
            .filter(|&n| n <= MAX_FRAME)
            .map(ResponseRule::Fixed)
            .ok_or_else(|| format!("bad response rule `{s}` (echo|fixed:<bytes>)"))
    }
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Read one frame into `buf`. `Ok(false)` on a clean end of stream before
/// any length byte.
pub fn read_frame<R: Read>(r: &mut R, buf: &mut Vec<u8>, max: u64) -> Result<bool, WireError> {
    let mut len = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(false),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u64::from_le_bytes(len);
    if len > max {
        return Err(WireError::FrameTooLarge { len, max });
    }
    buf.resize(len as usize, 0);
    r.read_exact(buf)?;
    Ok(true)
}

fn seq_of(payload: &[u8]) -> Option<u64> {
    payload
        .get(..8)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

fn respond(rule: ResponseRule, request: &[u8], out: &mut Vec<u8>) {
    match rule {
        ResponseRule::Echo => {
            out.clear();
            out.extend_from_slice(request);
        }
        ResponseRule::Fixed(n) => {
            out.clear();
            out.resize(n as usize, 0);
            if n >= 8 {
                if let Some(seq) = seq_of(request) {
                    out[..8].copy_from_slice(&seq.to_le_bytes());
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ServerConfig {
    pub rule: ResponseRule,
    pub max_frame: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            rule: ResponseRule::Echo,
            max_frame: MAX_FRAME,
        }
    }
}

/// A running server. Dropping it stops accepting; `shutdown` also joins.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    frames: Arc<AtomicU64>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Frames answered so far, over all connections.
    pub fn frames_served(&self) -> u64 {
        self.frames.load(Ordering::Relaxed)
    }

    /// Block until the accept loop ends, which only happens on shutdown.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

pub fn serve(listen: &str, cfg: ServerConfig) -> Result<Server, WireError> {
    let listener = TcpListener::bind(listen).map_err(|source| WireError::Bind {
        addr: listen.to_string(),
        source,
    })?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let frames = Arc::new(AtomicU64::new(0));
    let (s, f) = (stop.clone(), frames.clone());
    let accept = std::thread::Builder::new()
        .name("wirebench-accept".into())
        .spawn(move || {
            for conn in listener.incoming() {
                if s.load(Ordering::SeqCst) {
                    break;
                }
                match conn {
                    Ok(stream) => {
                        let f = f.clone();
                        let _ = std::thread::Builder::new()
                            .name("wirebench-conn".into())
                            .spawn(move || handle(stream, cfg, &f));
                    }
                    Err(e) => warn!("accept failed: {e}"),
                }
            }
        })?;
    Ok(Server {
        addr,
        stop,
        frames,
        accept: Some(accept),
    })
}

fn handle(stream: TcpStream, cfg: ServerConfig, frames: &AtomicU64) {
    let peer = stream
        .peer_addr()
        .map_or_else(|_| "?".to_string(), |a| a.to_string());
    let _ = stream.set_nodelay(true);
    let mut reader = match stream.try_clone() {
        Ok(r) => r,
        Err(e) => {
            warn!("{peer}: {e}");
            return;
        }
    };
    let mut writer = BufWriter::new(stream);
    let mut req = Vec::new();
    let mut resp = Vec::new();
    loop {
        match read_frame(&mut reader, &mut req, cfg.max_frame) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                warn!("{peer}: closing connection: {e}");
                break;
            }
        }
        respond(cfg.rule, &req, &mut resp);
        if let Err(e) = write_frame(&mut writer, &resp) {
            debug!("{peer}: write failed: {e}");
            break;
        }
        frames.fetch_add(1, Ordering::Relaxed);
    }
    let _ = writer.get_ref().shutdown(Shutdown::Both);
}

#[derive(Debug, Clone)]
pub struct MeasureConfig {
    pub addr: String,
    pub sizes: Vec<u64>,
    pub count: u32,
    pub warmup: u32,
    pub timeout: Duration,
    /// Expected response size; `Echo` also checks the bytes.
    pub expect: ResponseRule,
}

impl MeasureConfig {
    pub fn new(addr: impl Into<String>, sizes: Vec<u64>, count: u32) -> Self {
        MeasureConfig {
            addr: addr.into(),
            sizes,
            count,
            warmup: 10,
            timeout: Duration::from_secs(10),
            expect: ResponseRule::Echo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireSample {
    pub size_bytes: u64,
    pub seq: u64,
    pub duration_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeFailure {
    pub size_bytes: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct MeasureReport {
    pub samples: Vec<WireSample>,
    pub failures: Vec<SizeFailure>,
    /// Largest number of unanswered frames ever outstanding.
    pub max_in_flight: u32,
    /// Responses whose sequence number was not the one just sent.
    pub foreign_responses: u32,
}

impl MeasureReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{SAMPLES_CSV_HEADER}")?;
        for s in &self.samples {
            writeln!(out, "{},{},{}", s.size_bytes, s.seq, s.duration_ns)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn connect(addr: &str, timeout: Duration) -> io::Result<TcpStream> {
    let mut last = io::Error::new(io::ErrorKind::NotFound, format!("{addr} did not resolve"));
    for a in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(s) => {
                s.set_nodelay(true)?;
                s.set_read_timeout(Some(timeout))?;
                s.set_write_timeout(Some(timeout))?;
                return Ok(s);
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn fill(payload: &mut [u8], seq: u64) {
    for (i, b) in payload.iter_mut().enumerate() {
        *b = (seq as usize).wrapping_add(i).wrapping_mul(31) as u8;
    }
    if payload.len() >= 8 {
        payload[..8].copy_from_slice(&seq.to_le_bytes());
    }
}

/// Closed-loop run for one client. Sequence numbers start at `seq_base`.
pub fn measure_from(cfg: &MeasureConfig, seq_base: u64) -> MeasureReport {
    let mut report = MeasureReport::default();
    let mut seq = seq_base;
    let mut conn: Option<TcpStream> = None;
    let mut resp = Vec::new();
    for &size in &cfg.sizes {
        let result = (|| -> Result<(), WireError> {
            if conn.is_none() {
                conn = Some(connect(&cfg.addr, cfg.timeout)?);
            }
            let s = conn.as_mut().expect("connected");
            let mut payload = vec![0u8; size as usize];
            for i in 0..cfg.warmup + cfg.count {
                fill(&mut payload, seq);
                let t0 = Instant::now();
                write_frame(s, &payload)?;
                report.max_in_flight = report.max_in_flight.max(1);
                if !read_frame(s, &mut resp, MAX_FRAME)? {
                    return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
                }
                let elapsed = t0.elapsed();
                let want = cfg.expect.response_len(size);
                if resp.len() as u64 != want {
                    return Err(WireError::Mismatch(format!(
                        "sent {size} bytes, expected {want} back, got {}",
                        resp.len()
                    )));
                }
                if size >= 8 && want >= 8 && seq_of(&resp) != Some(seq) {
                    report.foreign_responses += 1;
                    return Err(WireError::Mismatch(format!(
                        "response carries seq {:?}, sent {seq}",
                        seq_of(&resp)
                    )));
                }
                if cfg.expect == ResponseRule::Echo && resp != payload {
                    return Err(WireError::Mismatch("echoed payload differs".into()));
                }
                if i >= cfg.warmup {
                    report.samples.push(WireSample {
                        size_bytes: size,
                        seq,
                        duration_ns: elapsed.as_nanos() as u64,
                    });
                }
                seq += 1;
            }
            Ok(())
        })();
        if let Err(e) = result {
            warn!("size {size}: {e}");
            report.failures.push(SizeFailure {
                size_bytes: size,
                error: e.to_string(),
            });
            conn = None;
        }
    }
    report
}

pub fn measure(cfg: &MeasureConfig) -> MeasureReport {
    measure_from(cfg, 0)
}

/// `clients` isolated closed-loop clients, each on its own connection and
/// its own range of sequence numbers (`client << 32`).
pub fn measure_concurrent(cfg: &MeasureConfig, clients: u32) -> Vec<MeasureReport> {
    let handles: Vec<_> = (0..clients)
        .map(|c| {
            let cfg = cfg.clone();
            std::thread::spawn(move || measure_from(&cfg, u64::from(c) << 32))
        })
        .collect();
    handles
        .into_iter()
        .map(|h| h.join().expect("measurement thread"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn server(rule: ResponseRule) -> Server {
        serve(
            "127.0.0.1:0",
            ServerConfig {
                rule,
                max_frame: 1 << 22,
            },
        )
        .unwrap()
    }

    #[test]
    fn frame_round_trip_in_memory() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        assert_eq!(buf.len(), 8 + 5);
        let mut out = Vec::new();
        assert!(read_frame(&mut buf.as_slice(), &mut out, 64).unwrap());
        assert_eq!(out, b"hello");
        assert!(!read_frame(&mut [].as_slice(), &mut out, 64).unwrap());
    }

    #[test]
    fn oversize_frame_rejected() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &[0u8; 100]).unwrap();
        let r = read_frame(&mut buf.as_slice(), &mut Vec::new(), 10);
        assert!(matches!(r, Err(WireError::FrameTooLarge { len: 100, max: 10 })));
    }

    #[test]
    fn rules_parse() {
        assert_eq!("echo".parse::<ResponseRule>().unwrap(), ResponseRule::Echo);
        assert_eq!("fixed:4000".parse::<ResponseRule>().unwrap(), ResponseRule::Fixed(4000));
        assert!("fixed:x".parse::<ResponseRule>().is_err());
        assert!("mirror".parse::<ResponseRule>().is_err());
    }

    #[test]
    fn echo_sizes_including_zero() {
        let srv = server(ResponseRule::Echo);
        let cfg = MeasureConfig {
            warmup: 2,
            ..MeasureConfig::new(srv.local_addr().to_string(), vec![0, 1024], 20)
        };
        let r = measure(&cfg);
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        assert_eq!(r.samples.len(), 40);
        assert!(r.samples.iter().all(|s| s.duration_ns > 0));
        assert_eq!(r.max_in_flight, 1);
        srv.shutdown();
    }

    #[test]
    fn fixed_response_mimics_model_output() {
        let srv = server(ResponseRule::Fixed(4000));
        let cfg = MeasureConfig {
            warmup: 0,
            expect: ResponseRule::Fixed(4000),
            ..MeasureConfig::new(srv.local_addr().to_string(), vec![602_112], 3)
        };
        let r = measure(&cfg);
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        assert_eq!(r.samples.len(), 3);
    }

    #[test]
    fn oversize_request_closes_connection_and_run_continues() {
        let srv = serve(
            "127.0.0.1:0",
            ServerConfig {
                rule: ResponseRule::Echo,
                max_frame: 1000,
            },
        )
        .unwrap();
        let cfg = MeasureConfig {
            warmup: 0,
            timeout: Duration::from_secs(2),
            ..MeasureConfig::new(srv.local_addr().to_string(), vec![5000, 10], 2)
        };
        let r = measure(&cfg);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].size_bytes, 5000);
        assert_eq!(r.samples.len(), 2);
    }

    #[test]
    fn unreachable_server_is_a_recorded_failure() {
        let addr = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap()
        };
        let cfg = MeasureConfig {
            timeout: Duration::from_millis(500),
            ..MeasureConfig::new(addr.to_string(), vec![8, 16], 1)
        };
        let r = measure(&cfg);
        assert_eq!(r.failures.len(), 2);
        assert!(r.samples.is_empty());
    }

    #[test]
    fn concurrent_clients_see_only_their_own_responses() {
        let srv = server(ResponseRule::Echo);
        let cfg = MeasureConfig {
            warmup: 1,
            ..MeasureConfig::new(srv.local_addr().to_string(), vec![64, 4096], 25)
        };
        let reports = measure_concurrent(&cfg, 4);
        for (c, r) in reports.iter().enumerate() {
            assert!(r.failures.is_empty(), "{:?}", r.failures);
            assert_eq!(r.foreign_responses, 0);
            assert!(r.samples.iter().all(|s| s.seq >> 32 == c as u64));
        }
        assert_eq!(srv.frames_served(), 4 * 2 * 26);
    }
}

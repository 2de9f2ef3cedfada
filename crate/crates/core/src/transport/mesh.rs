//! Multi-process backend: a full TCP mesh between all workers.
//!
//! The mesh is bootstrapped from a rank file with one line per worker,
//! `global_id island rank host port`. Each worker listens on its own port,
//! dials every lower global id and accepts every higher one. Frames are
//! length-prefixed (`u32` little-endian) and start with a kind byte: an
//! envelope, or a barrier marker carrying an epoch and a flag. A reader
//! thread per connection moves frames into the worker's inbox, so `poll`
//! only drains memory.
//!
//! Barriers send a marker down every connection and wait for the markers of
//! all peers. TCP keeps each connection in order, so every envelope a peer
//! posted before its marker is already in the inbox when the barrier exits.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use log::warn;

use super::{wire, Channel, Envelope, Layout, Transport, TransportError, WorkerAddress};

/// Env var naming this process's global id.
pub const RANK_ENV: &str = "PROPULSION_RANK";

const FRAME_ENVELOPE: u8 = 0;
const FRAME_MARKER: u8 = 1;
const HANDSHAKE_MAGIC: u32 = 0x5052_4f50;
const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankEntry {
    pub global_id: u32,
    pub island: u32,
    pub rank: u32,
    pub host: String,
    pub port: u16,
}

/// Parsed rank file, sorted by global id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankFile {
    entries: Vec<RankEntry>,
    layout: Layout,
}

impl RankFile {
    pub fn parse(text: &str) -> Result<Self, TransportError> {
        let bad = |line: usize, msg: &str| TransportError::Malformed(format!("rank file line {line}: {msg}"));
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad(i + 1, "expected `global_id island rank host port`"));
            }
            let num = |s: &str| s.parse::<u32>().map_err(|_| bad(i + 1, "invalid number"));
            entries.push(RankEntry {
                global_id: num(f[0])?,
                island: num(f[1])?,
                rank: num(f[2])?,
                host: f[3].to_string(),
                port: f[4].parse().map_err(|_| bad(i + 1, "invalid port"))?,
            });
        }
        Self::from_entries(entries)
    }

    pub fn read(path: &Path) -> Result<Self, TransportError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn from_entries(mut entries: Vec<RankEntry>) -> Result<Self, TransportError> {
        if entries.is_empty() {
            return Err(TransportError::Malformed("rank file is empty".into()));
        }
        entries.sort_by_key(|e| e.global_id);
        let islands = entries.iter().map(|e| e.island).max().expect("non-empty") as usize + 1;
        let mut sizes = vec![0u32; islands];
        for e in &entries {
            sizes[e.island as usize] = sizes[e.island as usize].max(e.rank + 1);
        }
        if sizes.contains(&0) {
            return Err(TransportError::Malformed("rank file skips an island".into()));
        }
        let layout = Layout::new(sizes);
        if layout.world_size() != entries.len() {
            return Err(TransportError::Malformed("rank file has gaps or duplicates".into()));
        }
        for e in &entries {
            if layout.address(e.island, e.rank).map(|a| a.global_id) != Some(e.global_id) {
                return Err(TransportError::Malformed(format!(
                    "global id {} does not match island {} rank {}",
                    e.global_id, e.island, e.rank
                )));
            }
        }
        Ok(Self { entries, layout })
    }

    pub fn entries(&self) -> &[RankEntry] {
        &self.entries
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} {} {} {} {}\n", e.global_id, e.island, e.rank, e.host, e.port))
            .collect()
    }

    fn entry(&self, global_id: u32) -> Result<&RankEntry, TransportError> {
        self.entries
            .get(global_id as usize)
            .ok_or_else(|| TransportError::UnknownDestination(format!("global id {global_id}")))
    }
}

/// Reads the global id from [`RANK_ENV`].
pub fn rank_from_env() -> Result<u32, TransportError> {
    let raw = std::env::var(RANK_ENV)
        .map_err(|_| TransportError::Malformed(format!("{RANK_ENV} is not set")))?;
    raw.trim()
        .parse()
        .map_err(|_| TransportError::Malformed(format!("{RANK_ENV}={raw} is not a rank")))
}

#[derive(Debug, Clone, Copy)]
pub struct MeshOptions {
    pub connect_timeout: Duration,
    pub barrier_timeout: Duration,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            connect_timeout: Duration::from_secs(30),
            barrier_timeout: Duration::from_secs(60),
        }
    }
}

struct Inbox {
    queues: [VecDeque<Envelope>; 3],
    /// Latest barrier epoch each peer has reached.
    epochs: Vec<u64>,
    /// OR of the flags received per epoch.
    flags: HashMap<u64, bool>,
    closed: Vec<bool>,
    error: Option<TransportError>,
}

struct Shared {
    inbox: Mutex<Inbox>,
    arrived: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Inbox> {
        self.inbox.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct MeshEndpoint {
    addr: WorkerAddress,
    layout: Layout,
    peers: Vec<Option<TcpStream>>,
    shared: Arc<Shared>,
    epoch: u64,
    started: Instant,
    options: MeshOptions,
    closed: bool,
}

impl MeshEndpoint {
    /// Binds this worker's port from the rank file and joins the mesh.
    pub fn bootstrap(ranks: &RankFile, global_id: u32, options: MeshOptions) -> Result<Self, TransportError> {
        let me = ranks.entry(global_id)?;
        let listener = TcpListener::bind((me.host.as_str(), me.port))?;
        Self::with_listener(listener, ranks, global_id, options)
    }

    /// Joins the mesh using an already bound listener.
    pub fn with_listener(
        listener: TcpListener,
        ranks: &RankFile,
        global_id: u32,
        options: MeshOptions,
    ) -> Result<Self, TransportError> {
        let layout = ranks.layout().clone();
        let addr = layout
            .by_global_id(global_id)
            .ok_or_else(|| TransportError::UnknownDestination(format!("global id {global_id}")))?;
        let n = layout.world_size();
        let deadline = Instant::now() + options.connect_timeout;
        let mut peers: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();

        for peer in 0..global_id {
            let entry = ranks.entry(peer)?;
            let mut stream = dial(&entry.host, entry.port, deadline)?;
            let mut hello = HANDSHAKE_MAGIC.to_le_bytes().to_vec();
            hello.extend_from_slice(&global_id.to_le_bytes());
            hello.extend_from_slice(&(n as u32).to_le_bytes());
            stream.write_all(&hello)?;
            peers[peer as usize] = Some(stream);
        }
        listener.set_nonblocking(true)?;
        let mut pending = n - 1 - global_id as usize;
        while pending > 0 {
            match listener.accept() {
                Ok((mut stream, _)) => {
                    stream.set_nonblocking(false)?;
                    let mut hello = [0u8; 12];
                    stream.read_exact(&mut hello)?;
                    let magic = u32::from_le_bytes(hello[0..4].try_into().expect("4 bytes"));
                    let peer = u32::from_le_bytes(hello[4..8].try_into().expect("4 bytes"));
                    let world = u32::from_le_bytes(hello[8..12].try_into().expect("4 bytes"));
                    if magic != HANDSHAKE_MAGIC || world as usize != n || peer <= global_id || peer as usize >= n {
                        return Err(TransportError::Malformed(format!("bad handshake from peer {peer}")));
                    }
                    if peers[peer as usize].is_some() {
                        return Err(TransportError::Malformed(format!("peer {peer} connected twice")));
                    }
                    peers[peer as usize] = Some(stream);
                    pending -= 1;
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() > deadline {
                        return Err(TransportError::TimeoutExceeded);
                    }
                    thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e.into()),
            }
        }

        let shared = Arc::new(Shared {
            inbox: Mutex::new(Inbox {
                queues: Default::default(),
                epochs: vec![0; n],
                flags: HashMap::new(),
                closed: vec![false; n],
                error: None,
            }),
            arrived: Condvar::new(),
        });
        for (peer, stream) in peers.iter().enumerate() {
            let Some(stream) = stream else { continue };
            stream.set_nodelay(true)?;
            let reader = stream.try_clone()?;
            let shared = shared.clone();
            thread::spawn(move || read_loop(reader, peer, shared));
        }
        Ok(Self {
            addr,
            layout,
            peers,
            shared,
            epoch: 0,
            started: Instant::now(),
            options,
            closed: false,
        })
    }

    fn send_frame(&mut self, dest: u32, kind: u8, body: &[u8]) -> Result<(), TransportError> {
        let stream = self.peers[dest as usize]
            .as_mut()
            .ok_or(TransportError::TransportClosed)?;
        let mut frame = Vec::with_capacity(5 + body.len());
        frame.extend_from_slice(&((body.len() + 1) as u32).to_le_bytes());
        frame.push(kind);
        frame.extend_from_slice(body);
        stream.write_all(&frame)?;
        Ok(())
    }
}

fn dial(host: &str, port: u16, deadline: Instant) -> Result<TcpStream, TransportError> {
    loop {
        let target = (host, port)
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| TransportError::Io(format!("cannot resolve {host}")))?;
        match TcpStream::connect_timeout(&target, Duration::from_millis(500)) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline => {
                log::trace!("dial {host}:{port}: {e}, retrying");
                thread::sleep(Duration::from_millis(20));
            }
            Err(_) => return Err(TransportError::TimeoutExceeded),
        }
    }
}

fn read_loop(mut stream: TcpStream, peer: usize, shared: Arc<Shared>) {
    let outcome = (|| -> Result<(), TransportError> {
        loop {
            let mut len = [0u8; 4];
            match stream.read_exact(&mut len) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
                Err(e) => return Err(e.into()),
            }
            let len = u32::from_le_bytes(len) as usize;
            if len == 0 || len > MAX_FRAME {
                return Err(TransportError::Malformed(format!("frame length {len}")));
            }
            let mut frame = vec![0u8; len];
            stream.read_exact(&mut frame)?;
            match frame[0] {
                FRAME_ENVELOPE => {
                    let envelope = wire::decode(&frame[1..])?;
                    let mut inbox = shared.lock();
                    inbox.queues[envelope.channel().index()].push_back(envelope);
                }
                FRAME_MARKER if frame.len() == 10 => {
                    let epoch = u64::from_le_bytes(frame[1..9].try_into().expect("8 bytes"));
                    let flag = frame[9] != 0;
                    let mut inbox = shared.lock();
                    inbox.epochs[peer] = epoch;
                    *inbox.flags.entry(epoch).or_insert(false) |= flag;
                    shared.arrived.notify_all();
                }
                k => return Err(TransportError::Malformed(format!("frame kind {k}"))),
            }
        }
    })();
    let mut inbox = shared.lock();
    inbox.closed[peer] = true;
    if let Err(e) = outcome {
        warn!("mesh reader stopped: {e}");
        inbox.error.get_or_insert(e);
    }
    shared.arrived.notify_all();
}

impl Transport for MeshEndpoint {
    fn address(&self) -> WorkerAddress {
        self.addr
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn post(&mut self, dest: WorkerAddress, envelope: Envelope) -> Result<(), TransportError> {
        if self.closed {
            return Err(TransportError::TransportClosed);
        }
        if !self.layout.contains(dest) {
            return Err(TransportError::UnknownDestination(dest.to_string()));
        }
        if dest.global_id == self.addr.global_id {
            let mut inbox = self.shared.lock();
            inbox.queues[envelope.channel().index()].push_back(envelope);
            return Ok(());
        }
        self.send_frame(dest.global_id, FRAME_ENVELOPE, &wire::to_bytes(&envelope))
    }

    fn poll(&mut self, channel: Channel) -> Vec<Envelope> {
        self.shared.lock().queues[channel.index()].drain(..).collect()
    }

    fn barrier_with(&mut self, flag: bool) -> Result<bool, TransportError> {
        if self.closed {
            return Err(TransportError::TransportClosed);
        }
        self.epoch += 1;
        let epoch = self.epoch;
        let mut marker = epoch.to_le_bytes().to_vec();
        marker.push(u8::from(flag));
        for peer in 0..self.layout.world_size() as u32 {
            if peer != self.addr.global_id {
                self.send_frame(peer, FRAME_MARKER, &marker)?;
            }
        }
        let me = self.addr.global_id as usize;
        let deadline = Instant::now() + self.options.barrier_timeout;
        let mut inbox = self.shared.lock();
        loop {
            let lagging: Vec<usize> = (0..inbox.epochs.len())
                .filter(|&p| p != me && inbox.epochs[p] < epoch)
                .collect();
            if lagging.is_empty() {
                let any = inbox.flags.remove(&epoch).unwrap_or(false);
                return Ok(flag || any);
            }
            if let Some(e) = &inbox.error {
                return Err(e.clone());
            }
            if lagging.iter().any(|&p| inbox.closed[p]) {
                return Err(TransportError::TransportClosed);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::TimeoutExceeded);
            }
            inbox = self
                .shared
                .arrived
                .wait_timeout(inbox, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    fn now(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    fn shutdown(&mut self) {
        if self.closed {
            return;
        }
        self.closed = true;
        for stream in self.peers.iter().flatten() {
            let _ = stream.shutdown(Shutdown::Write);
        }
    }
}

impl Drop for MeshEndpoint {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `n` listeners on loopback ports chosen by the OS and returns them
/// with a matching rank file.
pub fn local_mesh(island_sizes: &[u32]) -> Result<(RankFile, Vec<TcpListener>), TransportError> {
    let layout = Layout::new(island_sizes.to_vec());
    let mut entries = Vec::new();
    let mut listeners = Vec::new();
    for addr in layout.all() {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        entries.push(RankEntry {
            global_id: addr.global_id,
            island: addr.island,
            rank: addr.rank,
            host: "127.0.0.1".into(),
            port: listener.local_addr()?.port(),
        });
        listeners.push(listener);
    }
    Ok((RankFile::from_entries(entries)?, listeners))
}

//! Active and passive benchmark entities.
//!
//! The active side sends one Ethernet/IPv4/UDP frame carrying a sequence
//! index and its own send time, waits for the echo, and only then sends the
//! next. The passive side swaps addresses and sends each frame back to
//! wherever it came from.

use std::io;
use std::net::{Ipv4Addr, SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rtsabac_core::dissect::FrameSpec;

use crate::metrics::RttSample;

pub const ACTIVE_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x0a];
pub const PASSIVE_MAC: [u8; 6] = [0x02, 0, 0, 0, 0, 0x0b];
pub const ACTIVE_IP: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);
pub const PASSIVE_IP: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 2);
pub const ACTIVE_PORT: u16 = 5000;
pub const PASSIVE_PORT: u16 = 5001;

const PAYLOAD_OFFSET: usize = 14 + 20 + 8;
const PAYLOAD_LEN: usize = 12;

/// Benchmark request frame from the active to the passive entity.
pub fn probe_frame(index: u32, sent_ns: u64) -> Vec<u8> {
    let mut payload = index.to_be_bytes().to_vec();
    payload.extend(sent_ns.to_be_bytes());
    FrameSpec::new()
        .eth(PASSIVE_MAC, ACTIVE_MAC)
        .ipv4(ACTIVE_IP, PASSIVE_IP)
        .udp(ACTIVE_PORT, PASSIVE_PORT)
        .payload(payload)
        .build()
}

/// (index, send time) carried by a probe or its echo.
pub fn probe_fields(frame: &[u8]) -> Option<(u32, u64)> {
    let p = frame.get(PAYLOAD_OFFSET..PAYLOAD_OFFSET + PAYLOAD_LEN)?;
    Some((u32::from_be_bytes(p[..4].try_into().ok()?), u64::from_be_bytes(p[4..].try_into().ok()?)))
}

/// Swaps MAC, IPv4 and UDP endpoints in place. Checksums are sums over the
/// swapped fields and stay valid.
pub fn swap_endpoints(frame: &mut [u8]) -> bool {
    if frame.len() < PAYLOAD_OFFSET || frame[12..14] != [0x08, 0x00] || frame[14] != 0x45 {
        return false;
    }
    let (dst, src) = frame[..12].split_at_mut(6);
    dst.swap_with_slice(src);
    let (a, b) = frame[26..34].split_at_mut(4);
    a.swap_with_slice(b);
    let (a, b) = frame[34..38].split_at_mut(2);
    a.swap_with_slice(b);
    true
}

/// Outcome of one benchmark loop.
#[derive(Debug, Clone, Default)]
pub struct BenchRun {
    pub samples: Vec<RttSample>,
    /// Indices that saw no echo within the timeout.
    pub timeouts: Vec<u32>,
    pub elapsed_s: f64,
    /// Set when a socket error ended the loop early.
    pub aborted: Option<String>,
}

impl BenchRun {
    pub fn attempted(&self) -> usize {
        self.samples.len() + self.timeouts.len()
    }
}

/// Sequential echo loop over `n` probes sent to `target`.
pub fn run_benchmark(socket: &UdpSocket, target: SocketAddr, n: u32, timeout: Duration) -> BenchRun {
    let base = Instant::now();
    let mut run = BenchRun::default();
    let mut buf = [0u8; 2048];
    for index in 0..n {
        let sent = base.elapsed().as_nanos() as u64;
        if let Err(e) = socket.send_to(&probe_frame(index, sent), target) {
            run.aborted = Some(format!("send {index}: {e}"));
            break;
        }
        let deadline = Instant::now() + timeout;
        let mut echoed = None;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            if let Err(e) = socket.set_read_timeout(Some(left)) {
                run.aborted = Some(format!("socket: {e}"));
                break;
            }
            match socket.recv_from(&mut buf) {
                Ok((len, _)) => match probe_fields(&buf[..len]) {
                    Some((i, t)) if i == index => {
                        echoed = Some(t);
                        break;
                    }
                    _ => continue,
                },
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => break,
                // Loopback ICMP port-unreachable from a missing peer.
                Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => continue,
                Err(e) => {
                    run.aborted = Some(format!("recv {index}: {e}"));
                    break;
                }
            }
        }
        if run.aborted.is_some() {
            break;
        }
        match echoed {
            Some(t) => {
                let now = base.elapsed().as_nanos() as u64;
                let rtt_ms = now.saturating_sub(t) as f64 / 1e6;
                run.samples.push(RttSample { index, rtt_ms });
            }
            None => run.timeouts.push(index),
        }
    }
    run.elapsed_s = base.elapsed().as_secs_f64();
    run
}

#[derive(Debug, Default)]
pub struct PassiveStats {
    pub echoed: AtomicU64,
    pub malformed: AtomicU64,
    /// Largest number of probes observed queued at once, counting the one
    /// being echoed.
    pub max_in_flight: AtomicU64,
    record: bool,
    /// Frames as received, when recording.
    pub frames: Mutex<Vec<Vec<u8>>>,
}

/// Echo loop running on its own thread.
pub struct Passive {
    pub addr: SocketAddr,
    pub stats: Arc<PassiveStats>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Passive {
    pub fn spawn(socket: UdpSocket) -> io::Result<Passive> {
        Self::spawn_with(socket, false)
    }

    /// Like [`Passive::spawn`], keeping a copy of every received frame.
    pub fn spawn_with(socket: UdpSocket, record: bool) -> io::Result<Passive> {
        let addr = socket.local_addr()?;
        socket.set_read_timeout(Some(Duration::from_millis(50)))?;
        let stats = Arc::new(PassiveStats { record, ..Default::default() });
        let stop = Arc::new(AtomicBool::new(false));
        let (s, st) = (stats.clone(), stop.clone());
        let thread = std::thread::spawn(move || echo_loop(&socket, &s, &st));
        Ok(Passive { addr, stats, stop, thread: Some(thread) })
    }

    pub fn stop(mut self) -> Arc<PassiveStats> {
        self.halt();
        self.stats.clone()
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Passive {
    fn drop(&mut self) {
        self.halt();
    }
}

fn echo_loop(socket: &UdpSocket, stats: &PassiveStats, stop: &AtomicBool) {
    let mut buf = [0u8; 2048];
    let mut peek = [0u8; 1];
    while !stop.load(Ordering::SeqCst) {
        let (len, from) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(_) => continue,
        };
        let frame = &mut buf[..len];
        if stats.record {
            stats.frames.lock().unwrap().push(frame.to_vec());
        }
        if probe_fields(frame).is_none() || !swap_endpoints(frame) {
            stats.malformed.fetch_add(1, Ordering::Relaxed);
            continue;
        }
        let queued = socket.set_nonblocking(true).is_ok() && socket.peek_from(&mut peek).is_ok();
        let _ = socket.set_nonblocking(false);
        stats.max_in_flight.fetch_max(1 + u64::from(queued), Ordering::Relaxed);
        if socket.send_to(frame, from).is_ok() {
            stats.echoed.fetch_add(1, Ordering::Relaxed);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swap_round_trips_and_keeps_payload() {
        let f = probe_frame(7, 99);
        let mut g = f.clone();
        assert!(swap_endpoints(&mut g));
        assert_eq!(&g[..6], &ACTIVE_MAC);
        assert_eq!(&g[26..30], &PASSIVE_IP.octets());
        assert_eq!(&g[34..36], &PASSIVE_PORT.to_be_bytes());
        assert_eq!(probe_fields(&g), Some((7, 99)));
        swap_endpoints(&mut g);
        assert_eq!(g, f);
    }

    #[test]
    fn direct_single_probe() {
        let passive = Passive::spawn(UdpSocket::bind("127.0.0.1:0").unwrap()).unwrap();
        let active = UdpSocket::bind("127.0.0.1:0").unwrap();
        let run = run_benchmark(&active, passive.addr, 1, Duration::from_millis(1000));
        assert_eq!(run.samples.len(), 1);
        assert!(run.samples[0].rtt_ms > 0.0);
        assert_eq!(passive.stop().max_in_flight.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn missing_peer_times_out_every_probe() {
        let gone = UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
        let active = UdpSocket::bind("127.0.0.1:0").unwrap();
        let run = run_benchmark(&active, gone, 3, Duration::from_millis(30));
        assert!(run.samples.is_empty());
        assert_eq!(run.timeouts, vec![0, 1, 2]);
        assert!(run.aborted.is_none());
    }
}

//! Counters, accept loops and service lifecycles.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use log::{info, warn};

use rtsabac_core::wire::{Envelope, Message};

use crate::node::{read_frame, write_frame, NetError, Node};

/// Named event counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics(BTreeMap<String, u64>);

impl Metrics {
    pub fn incr(&mut self, name: &str) {
        self.add(name, 1);
    }

    pub fn add(&mut self, name: &str, n: u64) {
        *self.0.entry(name.to_string()).or_default() += n;
    }

    pub fn get(&self, name: &str) -> u64 {
        self.0.get(name).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}

pub type SharedMetrics = Arc<Mutex<Metrics>>;

/// A running service. Dropping it without [`ServiceHandle::shutdown`]
/// leaves its threads running.
pub struct ServiceHandle {
    pub id: String,
    pub control: SocketAddr,
    pub data: Option<SocketAddr>,
    pub device: Option<SocketAddr>,
    pub metrics: SharedMetrics,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub(crate) fn new(id: &str, control: SocketAddr, metrics: SharedMetrics, stop: Arc<AtomicBool>) -> Self {
        ServiceHandle { id: id.to_string(), control, data: None, device: None, metrics, stop, threads: Vec::new() }
    }

    pub(crate) fn push(&mut self, t: JoinHandle<()>) {
        self.threads.push(t);
    }

    pub fn metrics(&self) -> Metrics {
        self.metrics.lock().unwrap().clone()
    }

    /// Stops all threads and returns the final counters.
    pub fn shutdown(mut self) -> Metrics {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect_timeout(&self.control, Duration::from_millis(200));
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        let m = self.metrics();
        info!("event=shutdown service={} {}", self.id, m);
        m
    }
}

/// Replies to one inbound control message. `None` closes the connection.
pub type Handler = Box<dyn FnMut(Envelope) -> Option<Message> + Send>;

/// Sequential accept loop: empty frames are health pings, everything else
/// is opened with `node` and passed to `handler`.
pub(crate) fn serve(
    listener: TcpListener,
    node: Arc<Node>,
    metrics: SharedMetrics,
    stop: Arc<AtomicBool>,
    mut handler: Handler,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        for conn in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(mut s) = conn else { continue };
            let _ = s.set_read_timeout(Some(node.timeout));
            let _ = s.set_write_timeout(Some(node.timeout));
            let _ = s.set_nodelay(true);
            let Ok(frame) = read_frame(&mut s) else { continue };
            if frame.is_empty() {
                let _ = write_frame(&mut s, &[]);
                continue;
            }
            let env = match node.open(&frame) {
                Ok(env) => env,
                Err(e) => {
                    metrics.lock().unwrap().incr(&format!("rejected-{}", e.reason()));
                    warn!("event=reject service={} reason={} detail=\"{e}\"", node.id, e.reason());
                    continue;
                }
            };
            let sender = env.sender.clone();
            metrics.lock().unwrap().incr(&format!("rx-{}", env.message_type().name()));
            if let Some(reply) = handler(env) {
                let r = node.transmit(&sender, reply, |b| write_frame(&mut s, b));
                if let Err(e) = r {
                    warn!("event=reply-failed service={} peer={sender} detail=\"{e}\"", node.id);
                }
            }
        }
    })
}

/// Receive loop on a datagram socket, polling `stop` every 50 ms.
pub(crate) fn datagrams(
    socket: UdpSocket,
    stop: Arc<AtomicBool>,
    mut f: impl FnMut(&[u8], SocketAddr) + Send + 'static,
) -> io::Result<JoinHandle<()>> {
    socket.set_read_timeout(Some(Duration::from_millis(50)))?;
    Ok(std::thread::spawn(move || {
        let mut buf = vec![0u8; 65536];
        while !stop.load(Ordering::SeqCst) {
            match socket.recv_from(&mut buf) {
                Ok((n, from)) => f(&buf[..n], from),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(_) => {}
            }
        }
    }))
}

pub(crate) fn bind_tcp(addr: &str) -> Result<TcpListener, NetError> {
    let a = crate::config::resolve(addr)?;
    TcpListener::bind(a).map_err(|e| NetError::Io(io::Error::new(e.kind(), format!("bind {a}: {e}"))))
}

pub(crate) fn bind_udp(addr: &str) -> Result<UdpSocket, NetError> {
    let a = crate::config::resolve(addr)?;
    UdpSocket::bind(a).map_err(|e| NetError::Io(io::Error::new(e.kind(), format!("bind {a}: {e}"))))
}

/// Sockets of one service, bound before the service starts so that peers
/// can be configured with their actual addresses.
pub struct Sockets {
    pub control: TcpListener,
    pub data: Option<UdpSocket>,
    pub device: Option<UdpSocket>,
}

impl Sockets {
    /// Binds the addresses named in `cfg`.
    pub fn bind(cfg: &crate::config::NodeConfig) -> Result<Sockets, NetError> {
        let control = bind_tcp(&cfg.control)?;
        let (data, device) = match &cfg.dep {
            Some(d) => (Some(bind_udp(&d.data)?), Some(bind_udp(&d.device)?)),
            None => (None, None),
        };
        Ok(Sockets { control, data, device })
    }

    /// Ephemeral loopback sockets.
    pub fn local(with_data: bool) -> Result<Sockets, NetError> {
        let any = "127.0.0.1:0";
        let control = bind_tcp(any)?;
        let (data, device) = if with_data { (Some(bind_udp(any)?), Some(bind_udp(any)?)) } else { (None, None) };
        Ok(Sockets { control, data, device })
    }

    pub fn control_addr(&self) -> SocketAddr {
        self.control.local_addr().expect("bound")
    }

    pub fn data_addr(&self) -> Option<SocketAddr> {
        self.data.as_ref().and_then(|s| s.local_addr().ok())
    }

    pub fn device_addr(&self) -> Option<SocketAddr> {
        self.device.as_ref().and_then(|s| s.local_addr().ok())
    }
}

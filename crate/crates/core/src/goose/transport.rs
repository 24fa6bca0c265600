use std::io;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use socket2::{Domain, Protocol, Socket, Type};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport down: {0}")]
    Down(String),
}

/// Sink for encoded frames.
pub trait GooseTransport: Send {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError>;
}

impl GooseTransport for Box<dyn GooseTransport> {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        (**self).send(frame)
    }
}

/// In-process broadcast bus used in deterministic simulation runs.
#[derive(Debug, Clone, Default)]
pub struct InProcessBus {
    subscribers: Arc<Mutex<Vec<Sender<Vec<u8>>>>>,
}

impl InProcessBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&self) -> Receiver<Vec<u8>> {
        let (tx, rx) = channel();
        self.subscribers.lock().unwrap().push(tx);
        rx
    }

    pub fn sender(&self) -> InProcessSender {
        InProcessSender { bus: self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct InProcessSender {
    bus: InProcessBus,
}

impl GooseTransport for InProcessSender {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        let mut subs = self.bus.subscribers.lock().unwrap();
        subs.retain(|s| s.send(frame.to_vec()).is_ok());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MulticastConfig {
    pub group: Ipv4Addr,
    pub port: u16,
    /// Local interface used to send and join.
    pub interface: Ipv4Addr,
}

impl Default for MulticastConfig {
    fn default() -> Self {
        Self {
            group: Ipv4Addr::new(239, 61, 8, 50),
            port: 10285,
            interface: Ipv4Addr::LOCALHOST,
        }
    }
}

#[derive(Debug)]
pub struct UdpMulticastSender {
    socket: UdpSocket,
    dest: SocketAddrV4,
}

impl UdpMulticastSender {
    pub fn new(cfg: &MulticastConfig) -> io::Result<Self> {
        let socket = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP))?;
        socket.set_multicast_if_v4(&cfg.interface)?;
        socket.set_multicast_loop_v4(true)?;
        socket.set_multicast_ttl_v4(1)?;
        socket.bind(&SocketAddr::from((cfg.interface, 0)).into())?;
        Ok(Self {
            socket: socket.into(),
            dest: SocketAddrV4::new(cfg.group, cfg.port),
        })
    }
}

impl GooseTransport for UdpMulticastSender {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.socket
            .send_to(frame, self.dest)
            .map(|_| ())
            .map_err(|e| TransportError::Down(e.to_string()))
    }
}

#[derive(Debug)]
pub struct UdpMulticastReceiver {
    socket: UdpSocket,
    buf: Vec<u8>,
}

impl UdpMulticastReceiver {
    pub fn bind(cfg: &MulticastConfig) -> io::Result<Self> {
        let socket = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP))?;
        socket.set_reuse_address(true)?;
        #[cfg(unix)]
        socket.set_reuse_port(true)?;
        socket.bind(&SocketAddr::from((Ipv4Addr::UNSPECIFIED, cfg.port)).into())?;
        socket.join_multicast_v4(&cfg.group, &cfg.interface)?;
        Ok(Self {
            socket: socket.into(),
            buf: vec![0; 65_536],
        })
    }

    /// Waits up to `timeout` for one datagram.
    pub fn recv(&mut self, timeout: Duration) -> io::Result<Option<&[u8]>> {
        self.socket
            .set_read_timeout(Some(timeout.max(Duration::from_micros(1))))?;
        match self.socket.recv_from(&mut self.buf) {
            Ok((n, _)) => Ok(Some(&self.buf[..n])),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

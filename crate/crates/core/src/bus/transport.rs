//! Datagram transports under a [`BusSession`](super::BusSession).
//!
//! [`UdpMulticast`] is the deployment transport. [`MemoryHub`] gives the same
//! broadcast-to-everyone semantics inside one process, used by the
//! simulation harness and tests.

use std::io;
use std::mem::MaybeUninit;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use socket2::{Domain, Protocol, Socket, Type};

pub const DEFAULT_CID: u8 = 65;
pub const DEFAULT_PORT: u16 = 12175;

pub trait Transport: Send + Sync {
    /// Broadcast one datagram to every member of the group, including the sender.
    fn send(&self, datagram: &[u8]) -> io::Result<()>;

    /// Wait up to `timeout` for one datagram. A zero timeout only checks what
    /// is already queued.
    fn recv(&self, timeout: Duration) -> io::Result<Option<Vec<u8>>>;
}

/// Multicast group and port a session is bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupAddr {
    pub group: Ipv4Addr,
    pub port: u16,
}

impl GroupAddr {
    /// `--cid N` maps to group 239.65.65.N on the default port.
    pub fn from_cid(cid: u8) -> Self {
        Self {
            group: Ipv4Addr::new(239, 65, 65, cid),
            port: DEFAULT_PORT,
        }
    }
}

impl Default for GroupAddr {
    fn default() -> Self {
        Self::from_cid(DEFAULT_CID)
    }
}

impl std::fmt::Display for GroupAddr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.group, self.port)
    }
}

pub struct UdpMulticast {
    socket: Socket,
    dest: SocketAddr,
    read_timeout: Mutex<Option<Duration>>,
}

impl UdpMulticast {
    pub fn join(addr: GroupAddr) -> io::Result<Self> {
        let socket = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP))?;
        socket.set_reuse_address(true)?;
        #[cfg(unix)]
        socket.set_reuse_port(true)?;
        // binding the group address keeps traffic of other groups on the same port out
        let bind = SocketAddrV4::new(addr.group, addr.port);
        if socket.bind(&bind.into()).is_err() {
            socket.bind(&SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, addr.port).into())?;
        }
        socket.join_multicast_v4(&addr.group, &Ipv4Addr::UNSPECIFIED)?;
        socket.set_multicast_loop_v4(true)?;
        socket.set_multicast_ttl_v4(1)?;
        Ok(Self {
            socket,
            dest: SocketAddrV4::new(addr.group, addr.port).into(),
            read_timeout: Mutex::new(None),
        })
    }
}

impl Transport for UdpMulticast {
    fn send(&self, datagram: &[u8]) -> io::Result<()> {
        let n = self.socket.send_to(datagram, &self.dest.into())?;
        if n != datagram.len() {
            return Err(io::Error::new(
                io::ErrorKind::WriteZero,
                format!("short datagram write: {n} of {}", datagram.len()),
            ));
        }
        Ok(())
    }

    fn recv(&self, timeout: Duration) -> io::Result<Option<Vec<u8>>> {
        let mut buf = [MaybeUninit::<u8>::uninit(); 65_536];
        let res = if timeout.is_zero() {
            self.socket.recv_with_flags(&mut buf, libc::MSG_DONTWAIT)
        } else {
            let mut current = self.read_timeout.lock().unwrap();
            if *current != Some(timeout) {
                self.socket.set_read_timeout(Some(timeout))?;
                *current = Some(timeout);
            }
            drop(current);
            self.socket.recv(&mut buf)
        };
        match res {
            Ok(n) => {
                // SAFETY: the kernel initialised the first `n` bytes.
                let bytes = buf[..n].iter().map(|b| unsafe { b.assume_init() }).collect();
                Ok(Some(bytes))
            }
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted
                ) =>
            {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

/// In-process broadcast medium. Every endpoint receives every datagram,
/// its own included, in send order.
#[derive(Clone, Default)]
pub struct MemoryHub {
    members: Arc<Mutex<Vec<Sender<Vec<u8>>>>>,
}

impl MemoryHub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn endpoint(&self) -> MemoryTransport {
        let (tx, rx) = mpsc::channel();
        self.members.lock().unwrap().push(tx);
        MemoryTransport {
            hub: self.clone(),
            rx: Mutex::new(rx),
        }
    }

    /// Deliver raw bytes to every endpoint, bypassing any encoder.
    pub fn inject(&self, datagram: &[u8]) {
        let mut members = self.members.lock().unwrap();
        members.retain(|m| m.send(datagram.to_vec()).is_ok());
    }
}

pub struct MemoryTransport {
    hub: MemoryHub,
    rx: Mutex<Receiver<Vec<u8>>>,
}

impl Transport for MemoryTransport {
    fn send(&self, datagram: &[u8]) -> io::Result<()> {
        self.hub.inject(datagram);
        Ok(())
    }

    fn recv(&self, timeout: Duration) -> io::Result<Option<Vec<u8>>> {
        let rx = self.rx.lock().unwrap();
        if timeout.is_zero() {
            return match rx.try_recv() {
                Ok(d) => Ok(Some(d)),
                Err(TryRecvError::Empty) => Ok(None),
                Err(TryRecvError::Disconnected) => Ok(None),
            };
        }
        match rx.recv_timeout(timeout) {
            Ok(d) => Ok(Some(d)),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => Ok(None),
        }
    }
}

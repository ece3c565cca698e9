//! Latest-wins UDP ingestion and a plain sender.

use std::io::ErrorKind;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Serialize;

use super::{encode_packet, parse_packet, PacketKind, WireError, WirePacket};

/// Result of asking a source for its newest packet.
#[derive(Debug, Clone, PartialEq)]
pub enum Latest {
    NoneYet,
    Fresh(WirePacket),
    /// Nothing new since the last call; the previous packet again.
    Stale(WirePacket),
}

impl Latest {
    pub fn packet(&self) -> Option<&WirePacket> {
        match self {
            Latest::NoneYet => None,
            Latest::Fresh(p) | Latest::Stale(p) => Some(p),
        }
    }

    pub fn is_fresh(&self) -> bool {
        matches!(self, Latest::Fresh(_))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReceiverStats {
    pub received: u64,
    pub parse_errors: u64,
    /// Valid packets replaced by a newer one before anyone read them.
    pub superseded: u64,
    /// Packets whose seq was not newer than one already accepted.
    pub out_of_order: u64,
    /// Packets of a kind the receiver does not listen for.
    pub ignored: u64,
}

impl ReceiverStats {
    pub fn dropped(&self) -> u64 {
        self.superseded + self.out_of_order + self.parse_errors
    }
}

/// Datagram acceptance: kind filter, parse, monotone seq.
#[derive(Debug)]
struct Intake {
    kind: Option<PacketKind>,
    last_seq: Option<u64>,
    stats: ReceiverStats,
}

impl Intake {
    fn new(kind: Option<PacketKind>) -> Self {
        Intake {
            kind,
            last_seq: None,
            stats: ReceiverStats::default(),
        }
    }

    fn accept(&mut self, bytes: &[u8]) -> Option<WirePacket> {
        self.stats.received += 1;
        let p = match parse_packet(bytes) {
            Ok(p) => p,
            Err(e) => {
                log::debug!("dropping datagram: {e}");
                self.stats.parse_errors += 1;
                return None;
            }
        };
        if self.kind.is_some_and(|k| k != p.kind) {
            self.stats.ignored += 1;
            return None;
        }
        if self.last_seq.is_some_and(|s| p.seq <= s) {
            self.stats.out_of_order += 1;
            return None;
        }
        self.last_seq = Some(p.seq);
        Some(p)
    }
}

fn transient(e: &std::io::Error) -> bool {
    // ICMP port-unreachable from an earlier send surfaces here on Linux
    matches!(
        e.kind(),
        ErrorKind::ConnectionRefused | ErrorKind::ConnectionReset | ErrorKind::Interrupted
    )
}

/// Poll-style receiver: each call drains the socket and keeps the newest packet.
pub struct UdpReceiver {
    socket: UdpSocket,
    buf: Vec<u8>,
    intake: Intake,
    last: Option<WirePacket>,
}

impl UdpReceiver {
    pub fn bind(addr: impl ToSocketAddrs, kind: Option<PacketKind>) -> Result<Self, WireError> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_nonblocking(true)?;
        Ok(UdpReceiver {
            socket,
            buf: vec![0; 65_536],
            intake: Intake::new(kind),
            last: None,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, WireError> {
        Ok(self.socket.local_addr()?)
    }

    pub fn stats(&self) -> ReceiverStats {
        self.intake.stats
    }

    /// Non-blocking. Older queued datagrams are discarded in favour of the newest.
    pub fn receive_latest(&mut self) -> Result<Latest, WireError> {
        let mut newest: Option<WirePacket> = None;
        loop {
            match self.socket.recv(&mut self.buf) {
                Ok(n) => {
                    if let Some(p) = self.intake.accept(&self.buf[..n]) {
                        if newest.replace(p).is_some() {
                            self.intake.stats.superseded += 1;
                        }
                    }
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                Err(e) if transient(&e) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(match newest {
            Some(p) => {
                self.last = Some(p.clone());
                Latest::Fresh(p)
            }
            None => match &self.last {
                Some(p) => Latest::Stale(p.clone()),
                None => Latest::NoneYet,
            },
        })
    }
}

/// Single-producer/single-consumer cell holding only the newest value.
#[derive(Debug)]
pub struct LatestCell<T> {
    slot: Mutex<Slot<T>>,
}

#[derive(Debug)]
struct Slot<T> {
    value: Option<T>,
    version: u64,
    read_version: u64,
    overwritten: u64,
}

impl<T: Clone> Default for LatestCell<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Clone> LatestCell<T> {
    pub fn new() -> Self {
        LatestCell {
            slot: Mutex::new(Slot {
                value: None,
                version: 0,
                read_version: 0,
                overwritten: 0,
            }),
        }
    }

    pub fn store(&self, value: T) {
        let mut s = self.slot.lock().unwrap();
        if s.value.is_some() && s.version != s.read_version {
            s.overwritten += 1;
        }
        s.value = Some(value);
        s.version += 1;
    }

    /// Newest value and whether it is new since the previous read.
    pub fn read(&self) -> Option<(T, bool)> {
        let mut s = self.slot.lock().unwrap();
        let fresh = s.version != s.read_version;
        s.read_version = s.version;
        s.value.clone().map(|v| (v, fresh))
    }

    /// Values stored and replaced without ever being read.
    pub fn overwritten(&self) -> u64 {
        self.slot.lock().unwrap().overwritten
    }
}

/// Receiver thread feeding a [`LatestCell`]; the engine reads from the handle.
pub struct ReceiverHandle {
    cell: Arc<LatestCell<WirePacket>>,
    stats: Arc<Mutex<ReceiverStats>>,
    stop: Arc<AtomicBool>,
    addr: SocketAddr,
    thread: Option<JoinHandle<()>>,
}

impl ReceiverHandle {
    pub fn spawn(addr: impl ToSocketAddrs, kind: Option<PacketKind>) -> Result<Self, WireError> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(Duration::from_millis(20)))?;
        let local = socket.local_addr()?;
        let cell = Arc::new(LatestCell::new());
        let stats = Arc::new(Mutex::new(ReceiverStats::default()));
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let (cell, stats, stop) = (cell.clone(), stats.clone(), stop.clone());
            std::thread::Builder::new()
                .name(format!("udp-in-{}", local.port()))
                .spawn(move || {
                    let mut intake = Intake::new(kind);
                    let mut buf = vec![0u8; 65_536];
                    while !stop.load(Ordering::Relaxed) {
                        match socket.recv(&mut buf) {
                            Ok(n) => {
                                if let Some(p) = intake.accept(&buf[..n]) {
                                    cell.store(p);
                                }
                                *stats.lock().unwrap() = intake.stats;
                            }
                            Err(e)
                                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
                                    || transient(&e) => {}
                            Err(e) => {
                                log::error!("udp receiver on {local} stopped: {e}");
                                break;
                            }
                        }
                    }
                })?
        };
        Ok(ReceiverHandle {
            cell,
            stats,
            stop,
            addr: local,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn latest(&self) -> Latest {
        match self.cell.read() {
            None => Latest::NoneYet,
            Some((p, true)) => Latest::Fresh(p),
            Some((p, false)) => Latest::Stale(p),
        }
    }

    pub fn stats(&self) -> ReceiverStats {
        let mut s = *self.stats.lock().unwrap();
        s.superseded += self.cell.overwritten();
        s
    }
}

impl Drop for ReceiverHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub struct UdpSender {
    socket: UdpSocket,
    dest: SocketAddr,
}

impl UdpSender {
    pub fn new(dest: impl ToSocketAddrs) -> Result<Self, WireError> {
        let dest = dest
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| WireError::Io(std::io::Error::other("destination did not resolve")))?;
        let bind: SocketAddr = if dest.is_ipv4() {
            "0.0.0.0:0".parse().unwrap()
        } else {
            "[::]:0".parse().unwrap()
        };
        Ok(UdpSender {
            socket: UdpSocket::bind(bind)?,
            dest,
        })
    }

    pub fn send(&self, p: &WirePacket) -> Result<usize, WireError> {
        let bytes = encode_packet(p)?;
        match self.socket.send_to(&bytes, self.dest) {
            Ok(n) => Ok(n),
            Err(e) if transient(&e) => Ok(0),
            Err(e) => Err(e.into()),
        }
    }

    pub fn dest(&self) -> SocketAddr {
        self.dest
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seq: u64) -> WirePacket {
        WirePacket::new(PacketKind::BandPowerFrame, seq, seq * 40, vec![vec![1.0; 5]; 16])
    }

    fn wait() {
        std::thread::sleep(Duration::from_millis(30));
    }

    #[test]
    fn latest_wins_and_stale_repeat() {
        let mut rx = UdpReceiver::bind("127.0.0.1:0", None).unwrap();
        let tx = UdpSender::new(rx.local_addr().unwrap()).unwrap();
        assert_eq!(rx.receive_latest().unwrap(), Latest::NoneYet);
        for s in [5, 6, 7] {
            tx.send(&frame(s)).unwrap();
        }
        wait();
        assert_eq!(rx.receive_latest().unwrap(), Latest::Fresh(frame(7)));
        assert_eq!(rx.receive_latest().unwrap(), Latest::Stale(frame(7)));
        assert_eq!(rx.stats().superseded, 2);
    }

    #[test]
    fn never_goes_backwards_and_counts_garbage() {
        let mut rx = UdpReceiver::bind("127.0.0.1:0", None).unwrap();
        let tx = UdpSender::new(rx.local_addr().unwrap()).unwrap();
        tx.send(&frame(10)).unwrap();
        wait();
        assert_eq!(rx.receive_latest().unwrap().packet().unwrap().seq, 10);
        tx.send(&frame(3)).unwrap();
        tx.socket.send_to(b"garbage", tx.dest).unwrap();
        wait();
        assert_eq!(rx.receive_latest().unwrap(), Latest::Stale(frame(10)));
        let st = rx.stats();
        assert_eq!((st.out_of_order, st.parse_errors), (1, 1));
    }

    #[test]
    fn kind_filter() {
        let mut rx = UdpReceiver::bind("127.0.0.1:0", Some(PacketKind::FftFrame)).unwrap();
        let tx = UdpSender::new(rx.local_addr().unwrap()).unwrap();
        tx.send(&frame(1)).unwrap();
        wait();
        assert_eq!(rx.receive_latest().unwrap(), Latest::NoneYet);
        assert_eq!(rx.stats().ignored, 1);
    }

    #[test]
    fn latest_cell_reports_freshness_and_overwrites() {
        let cell = LatestCell::new();
        assert_eq!(cell.read(), None::<(i32, bool)>);
        cell.store(1);
        cell.store(2);
        assert_eq!(cell.read(), Some((2, true)));
        assert_eq!(cell.read(), Some((2, false)));
        assert_eq!(cell.overwritten(), 1);
    }

    #[test]
    fn receiver_thread_hands_over_newest() {
        let rx = ReceiverHandle::spawn("127.0.0.1:0", None).unwrap();
        let tx = UdpSender::new(rx.local_addr()).unwrap();
        assert_eq!(rx.latest(), Latest::NoneYet);
        for s in 1..=4 {
            tx.send(&frame(s)).unwrap();
        }
        std::thread::sleep(Duration::from_millis(100));
        assert_eq!(rx.latest(), Latest::Fresh(frame(4)));
        assert!(matches!(rx.latest(), Latest::Stale(_)));
    }
}

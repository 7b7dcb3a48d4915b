//! Message transports: an in-process channel bus and a TCP full mesh.

use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::wire::{read_frame, write_frame, WireError};
use super::{CoalitionMessage, Payload, RUNNER_ID};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport closed")]
    Closed,
    #[error("could not reach peer {0} before the connect timeout")]
    ConnectTimeout(SocketAddr),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// One agent's endpoint: send-to-all and non-blocking receive. Delivery is
/// reliable and ordered per sender.
pub trait Transport: Send {
    fn broadcast(&mut self, msg: &CoalitionMessage) -> Result<(), TransportError>;
    fn try_recv(&mut self) -> Result<Option<CoalitionMessage>, TransportError>;
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<CoalitionMessage>, TransportError>;
}

/// In-process endpoint backed by channels.
#[derive(Debug)]
pub struct BusEndpoint {
    id: u16,
    peers: Vec<Sender<CoalitionMessage>>,
    rx: Receiver<CoalitionMessage>,
}

impl BusEndpoint {
    pub fn id(&self) -> u16 {
        self.id
    }
}

/// Lets the runner send STOP to every agent on the bus.
#[derive(Clone, Debug)]
pub struct RunnerHandle {
    agents: Vec<Sender<CoalitionMessage>>,
    seq: u64,
}

impl RunnerHandle {
    pub fn stop_all(&mut self) {
        for tx in &self.agents {
            // An agent that already finished has dropped its receiver.
            let _ = tx.send(CoalitionMessage {
                sender: RUNNER_ID,
                seq: self.seq,
                payload: Payload::Stop(None),
            });
        }
        self.seq += 1;
    }
}

/// Endpoints for `n` fully connected agents plus a runner handle.
pub fn in_process_bus(n: usize) -> (Vec<BusEndpoint>, RunnerHandle) {
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel()).unzip();
    let endpoints = rxs
        .into_iter()
        .enumerate()
        .map(|(i, rx)| BusEndpoint {
            id: i as u16,
            peers: txs
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, tx)| tx.clone())
                .collect(),
            rx,
        })
        .collect();
    (endpoints, RunnerHandle { agents: txs, seq: 0 })
}

impl Transport for BusEndpoint {
    fn broadcast(&mut self, msg: &CoalitionMessage) -> Result<(), TransportError> {
        for tx in &self.peers {
            // Finished peers no longer listen; nothing is owed to them.
            let _ = tx.send(msg.clone());
        }
        Ok(())
    }

    fn try_recv(&mut self) -> Result<Option<CoalitionMessage>, TransportError> {
        match self.rx.try_recv() {
            Ok(m) => Ok(Some(m)),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(TransportError::Closed),
        }
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<CoalitionMessage>, TransportError> {
        match self.rx.recv_timeout(timeout) {
            Ok(m) => Ok(Some(m)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }
}

/// Full-mesh TCP endpoint: one outgoing stream per peer, one reader thread
/// per incoming stream.
pub struct TcpTransport {
    writers: Vec<(SocketAddr, BufWriter<TcpStream>)>,
    rx: Receiver<Result<CoalitionMessage, WireError>>,
    _keepalive: Sender<Result<CoalitionMessage, WireError>>,
}

impl TcpTransport {
    /// Accepts one connection from each peer on `listener` and connects to
    /// every address in `peers`, retrying until `connect_timeout`.
    pub fn connect(listener: TcpListener, peers: &[SocketAddr], connect_timeout: Duration) -> Result<Self, TransportError> {
        let (tx, rx) = mpsc::channel();
        let expected = peers.len();
        let accept_tx = tx.clone();
        thread::spawn(move || {
            for stream in listener.incoming().take(expected) {
                let Ok(stream) = stream else { continue };
                let tx = accept_tx.clone();
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream);
                    loop {
                        match read_frame(&mut reader) {
                            Ok(Some(msg)) => {
                                if tx.send(Ok(msg)).is_err() {
                                    break;
                                }
                            }
                            Ok(None) => break,
                            Err(e) => {
                                let _ = tx.send(Err(e));
                                break;
                            }
                        }
                    }
                });
            }
        });

        let deadline = Instant::now() + connect_timeout;
        let mut writers = Vec::with_capacity(peers.len());
        for &addr in peers {
            let stream = loop {
                match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
                    Ok(s) => break s,
                    Err(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(50)),
                    Err(_) => return Err(TransportError::ConnectTimeout(addr)),
                }
            };
            stream.set_nodelay(true)?;
            writers.push((addr, BufWriter::new(stream)));
        }
        Ok(Self {
            writers,
            rx,
            _keepalive: tx,
        })
    }

    fn take(&self, r: Result<Result<CoalitionMessage, WireError>, ()>) -> Result<Option<CoalitionMessage>, TransportError> {
        match r {
            Ok(Ok(m)) => Ok(Some(m)),
            Ok(Err(e)) => {
                log::warn!("dropping malformed frame: {e}");
                Ok(None)
            }
            Err(()) => Ok(None),
        }
    }
}

impl Transport for TcpTransport {
    fn broadcast(&mut self, msg: &CoalitionMessage) -> Result<(), TransportError> {
        let mut result = Ok(());
        self.writers.retain_mut(|(addr, w)| match write_frame(w, msg) {
            Ok(()) => true,
            Err(e) => {
                log::warn!("peer {addr} unreachable, dropping it: {e}");
                result = Err(TransportError::Wire(e));
                false
            }
        });
        if self.writers.is_empty() {
            result
        } else {
            Ok(())
        }
    }

    fn try_recv(&mut self) -> Result<Option<CoalitionMessage>, TransportError> {
        let r = self.rx.try_recv().map_err(|_| ());
        self.take(r)
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<CoalitionMessage>, TransportError> {
        let r = self.rx.recv_timeout(timeout).map_err(|_| ());
        self.take(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stop(sender: u16, seq: u64) -> CoalitionMessage {
        CoalitionMessage {
            sender,
            seq,
            payload: Payload::Stop(None),
        }
    }

    #[test]
    fn bus_delivers_to_all_others() {
        let (mut eps, _) = in_process_bus(3);
        eps[0].broadcast(&stop(0, 0)).unwrap();
        assert!(eps[0].try_recv().unwrap().is_none());
        assert_eq!(eps[1].try_recv().unwrap(), Some(stop(0, 0)));
        assert_eq!(eps[2].try_recv().unwrap(), Some(stop(0, 0)));
        assert!(eps[1].try_recv().unwrap().is_none());
    }

    #[test]
    fn bus_preserves_sender_order() {
        let (mut eps, _) = in_process_bus(2);
        eps[0].broadcast(&stop(0, 0)).unwrap();
        eps[0].broadcast(&stop(0, 1)).unwrap();
        assert_eq!(eps[1].try_recv().unwrap().unwrap().seq, 0);
        assert_eq!(eps[1].try_recv().unwrap().unwrap().seq, 1);
    }

    #[test]
    fn tcp_mesh_exchanges_frames() {
        let listeners: Vec<TcpListener> = (0..3).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
        let addrs: Vec<SocketAddr> = listeners.iter().map(|l| l.local_addr().unwrap()).collect();
        let handles: Vec<_> = listeners
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let peers: Vec<SocketAddr> = addrs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, a)| *a).collect();
                thread::spawn(move || {
                    let mut t = TcpTransport::connect(l, &peers, Duration::from_secs(10)).unwrap();
                    t.broadcast(&stop(i as u16, 0)).unwrap();
                    t.broadcast(&stop(i as u16, 1)).unwrap();
                    let mut got = Vec::new();
                    while got.len() < 4 {
                        if let Some(m) = t.recv_timeout(Duration::from_secs(10)).unwrap() {
                            got.push((m.sender, m.seq));
                        }
                    }
                    got
                })
            })
            .collect();
        for (i, h) in handles.into_iter().enumerate() {
            let got = h.join().unwrap();
            for s in (0..3u16).filter(|&s| s as usize != i) {
                let seqs: Vec<u64> = got.iter().filter(|g| g.0 == s).map(|g| g.1).collect();
                assert_eq!(seqs, vec![0, 1]);
            }
        }
    }
}

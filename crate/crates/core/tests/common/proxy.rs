//! TCP relay between a client and a server that can damage frame checksums
//! in flight and counts what passes through.

use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread::{self, JoinHandle};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const UP: usize = 0;
pub const DOWN: usize = 1;

#[derive(Debug, Clone, Copy)]
pub enum Fault {
    None,
    /// Each frame's checksum is damaged with probability `rate`.
    Random {
        rate: f64,
        seed: u64,
    },
    /// The first `n` client-to-server frames are damaged.
    FirstUpstream(u64),
}

#[derive(Debug, Default)]
pub struct Counters {
    pub bytes: [AtomicU64; 2],
    pub frames: [AtomicU64; 2],
    pub corrupted: [AtomicU64; 2],
}

impl Counters {
    pub fn bytes(&self, dir: usize) -> u64 {
        self.bytes[dir].load(Ordering::SeqCst)
    }
    pub fn frames(&self, dir: usize) -> u64 {
        self.frames[dir].load(Ordering::SeqCst)
    }
    pub fn corrupted(&self, dir: usize) -> u64 {
        self.corrupted[dir].load(Ordering::SeqCst)
    }
}

pub struct Proxy {
    pub port: u16,
    pub counters: Arc<Counters>,
    handle: JoinHandle<()>,
}

impl Proxy {
    /// Relays the first connection on a fresh loopback port to `upstream`.
    pub fn start(upstream: SocketAddr, fault: Fault) -> Proxy {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        let counters = Arc::new(Counters::default());
        let c = counters.clone();
        let handle = thread::spawn(move || {
            let (client, _) = listener.accept().unwrap();
            drop(listener);
            let server = TcpStream::connect(upstream).unwrap();
            client.set_nodelay(true).unwrap();
            server.set_nodelay(true).unwrap();
            let up = {
                let (from, to, c) = (client.try_clone().unwrap(), server.try_clone().unwrap(), c.clone());
                thread::spawn(move || pump(from, to, UP, fault, &c))
            };
            pump(server, client, DOWN, fault, &c);
            up.join().unwrap();
        });
        Proxy { port, counters, handle }
    }

    pub fn join(self) {
        self.handle.join().unwrap();
    }
}

fn other_hex_digit(b: u8) -> u8 {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    let v = HEX.iter().position(|&h| h == b).unwrap_or(0);
    HEX[(v + 1) % 16]
}

enum Scan {
    Outside,
    Payload,
    Checksum { left: u8, damage: bool },
}

fn pump(mut from: TcpStream, mut to: TcpStream, dir: usize, fault: Fault, c: &Counters) {
    let mut rng = match fault {
        Fault::Random { seed, .. } => ChaCha8Rng::seed_from_u64(seed.wrapping_add(dir as u64)),
        _ => ChaCha8Rng::seed_from_u64(0),
    };
    let mut scan = Scan::Outside;
    let mut buf = [0u8; 4096];
    loop {
        let n = match from.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        for b in &mut buf[..n] {
            scan = match scan {
                Scan::Outside if *b == b'$' => Scan::Payload,
                Scan::Outside => Scan::Outside,
                Scan::Payload if *b == b'#' => {
                    let index = c.frames[dir].fetch_add(1, Ordering::SeqCst);
                    let damage = match fault {
                        Fault::None => false,
                        Fault::Random { rate, .. } => rng.random_bool(rate),
                        Fault::FirstUpstream(k) => dir == UP && index < k,
                    };
                    if damage {
                        c.corrupted[dir].fetch_add(1, Ordering::SeqCst);
                    }
                    Scan::Checksum { left: 2, damage }
                }
                Scan::Payload => Scan::Payload,
                Scan::Checksum { left, damage } => {
                    if damage && left == 2 {
                        *b = other_hex_digit(*b);
                    }
                    if left == 1 { Scan::Outside } else { Scan::Checksum { left: left - 1, damage } }
                }
            };
        }
        c.bytes[dir].fetch_add(n as u64, Ordering::SeqCst);
        if to.write_all(&buf[..n]).is_err() {
            break;
        }
    }
    let _ = to.shutdown(Shutdown::Write);
}

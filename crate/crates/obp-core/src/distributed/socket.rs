//! Socket transport: every node runs on its own thread behind a real TCP
//! stream on localhost, holding its [`NodeCore`] privately. The coordinator
//! drives the identical round protocol as the in-process backend; only the
//! call transport differs. Floats cross the wire as raw IEEE-754 bits so
//! infinities and exact values survive the JSON framing; term batches use
//! the binary wire encoding from [`super::wire`].

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::backprop::Norm;
use crate::circuit::{circuit_from_json, circuit_to_json, Circuit, Slice};
use crate::pauli::{PauliAddress, PauliSum};
use crate::Error;

use super::{ClusterRun, NodeBackend, NodeCore, PartitionMap, ScanReply};

#[derive(Serialize, Deserialize)]
enum Request {
    ConjugateAndSplit {
        slice: serde_json::Value,
        boundaries: Vec<Vec<u8>>,
    },
    Deliver {
        bytes: Vec<u8>,
    },
    Len,
    MinMax,
    AccTotal {
        norm: Norm,
    },
    Scan {
        t_bits: u64,
        norm: Norm,
    },
    RemoveBelow {
        t_bits: u64,
    },
    TieTerms {
        t_bits: u64,
    },
    RemoveKeys {
        bytes: Vec<u8>,
    },
    KthAddress {
        k: usize,
    },
    ExtractTail {
        from: usize,
    },
    ExtractHead {
        k: usize,
    },
    Dump,
    Shutdown,
}

#[derive(Serialize, Deserialize)]
enum Response {
    Batches(Vec<(usize, Vec<u8>)>),
    Unit,
    Len(usize),
    MinMax { lo_bits: u64, hi_bits: u64 },
    Acc { bits: u64 },
    Scan { acc: u64, below: u64, above: u64 },
    Bytes(Vec<u8>),
    MaybeAddress(Option<Vec<u8>>),
    Failed(String),
}

fn write_frame<T: Serialize>(stream: &mut TcpStream, value: &T) -> Result<(), Error> {
    let body = serde_json::to_vec(value)?;
    stream.write_all(&(body.len() as u32).to_be_bytes())?;
    stream.write_all(&body)?;
    Ok(())
}

fn read_frame<T: for<'de> Deserialize<'de>>(stream: &mut TcpStream) -> Result<T, Error> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let mut body = vec![0u8; u32::from_be_bytes(len) as usize];
    stream.read_exact(&mut body)?;
    Ok(serde_json::from_slice(&body)?)
}

fn node_loop(mut core: NodeCore, mut stream: TcpStream) {
    loop {
        let request: Request = match read_frame(&mut stream) {
            Ok(r) => r,
            Err(_) => return,
        };
        let response = handle(&mut core, request);
        let done = matches!(response, None);
        let reply = response.unwrap_or(Response::Unit);
        if write_frame(&mut stream, &reply).is_err() || done {
            return;
        }
    }
}

fn handle(core: &mut NodeCore, request: Request) -> Option<Response> {
    let reply = match request {
        Request::ConjugateAndSplit { slice, boundaries } => (|| {
            let circuit = circuit_from_json(&slice)?;
            let partition = PartitionMap::from_boundary_bytes(core.n, &boundaries)?;
            let slice = circuit
                .slices
                .into_iter()
                .next()
                .ok_or_else(|| Error::Cluster("empty slice payload".into()))?;
            Ok::<Response, Error>(Response::Batches(
                core.conjugate_and_split(&slice, &partition)?,
            ))
        })()
        .unwrap_or_else(|e| Response::Failed(e.to_string())),
        Request::Deliver { bytes } => match core.deliver(&bytes) {
            Ok(()) => Response::Unit,
            Err(e) => Response::Failed(e.to_string()),
        },
        Request::Len => Response::Len(core.len()),
        Request::MinMax => {
            let (lo, hi) = core.min_max_abs();
            Response::MinMax {
                lo_bits: lo.to_bits(),
                hi_bits: hi.to_bits(),
            }
        }
        Request::AccTotal { norm } => Response::Acc {
            bits: core.acc_total(norm).to_bits(),
        },
        Request::Scan { t_bits, norm } => {
            let reply = core.scan(f64::from_bits(t_bits), norm);
            Response::Scan {
                acc: reply.acc_below.to_bits(),
                below: reply.max_below.to_bits(),
                above: reply.min_at_or_above.to_bits(),
            }
        }
        Request::RemoveBelow { t_bits } => {
            core.remove_below(f64::from_bits(t_bits));
            Response::Unit
        }
        Request::TieTerms { t_bits } => Response::Bytes(core.tie_terms(f64::from_bits(t_bits))),
        Request::RemoveKeys { bytes } => match core.remove_keys(&bytes) {
            Ok(()) => Response::Unit,
            Err(e) => Response::Failed(e.to_string()),
        },
        Request::KthAddress { k } => {
            Response::MaybeAddress(core.kth_address(k).map(|a| a.to_bytes_be(core.n)))
        }
        Request::ExtractTail { from } => Response::Bytes(core.extract_tail(from)),
        Request::ExtractHead { k } => Response::Bytes(core.extract_head(k)),
        Request::Dump => Response::Bytes(core.dump()),
        Request::Shutdown => return None,
    };
    Some(reply)
}

/// Coordinator-side handle to one socket node.
pub struct SocketNode {
    stream: TcpStream,
    handle: Option<JoinHandle<()>>,
}

impl SocketNode {
    fn call(&mut self, request: &Request) -> Result<Response, Error> {
        write_frame(&mut self.stream, request)?;
        match read_frame(&mut self.stream)? {
            Response::Failed(msg) => Err(Error::Cluster(msg)),
            other => Ok(other),
        }
    }

    fn expect_unit(&mut self, request: &Request) -> Result<(), Error> {
        match self.call(request)? {
            Response::Unit => Ok(()),
            _ => Err(Error::Cluster("unexpected node response".into())),
        }
    }
}

impl NodeBackend for SocketNode {
    fn conjugate_and_split(
        &mut self,
        slice: &Slice,
        partition: &PartitionMap,
    ) -> Result<Vec<(usize, Vec<u8>)>, Error> {
        let circuit = Circuit {
            n: partition.n,
            slices: vec![slice.clone()],
        };
        match self.call(&Request::ConjugateAndSplit {
            slice: circuit_to_json(&circuit),
            boundaries: partition.boundaries_bytes(),
        })? {
            Response::Batches(b) => Ok(b),
            _ => Err(Error::Cluster("unexpected node response".into())),
        }
    }

    fn deliver(&mut self, bytes: &[u8]) -> Result<(), Error> {
        self.expect_unit(&Request::Deliver {
            bytes: bytes.to_vec(),
        })
    }

    fn len(&mut self) -> Result<usize, Error> {
        match self.call(&Request::Len)? {
            Response::Len(l) => Ok(l),
            _ => Err(Error::Cluster("unexpected node response".into())),
        }
    }

    fn min_max_abs(&mut self) -> Result<(f64, f64), Error> {
        match self.call(&Request::MinMax)? {
            Response::MinMax { lo_bits, hi_bits } => {
                Ok((f64::from_bits(lo_bits), f64::from_bits(hi_bits)))
            }
            _ => Err(Error::Cluster("unexpected node response".into())),
        }
    }

    fn acc_total(&mut self, norm: Norm) -> Result<f64, Error> {
        match self.call(&Request::AccTotal { norm })? {
            Response::Acc { bits } => Ok(f64::from_bits(bits)),
            _ => Err(Error::Cluster("unexpected node response".into())),
        }
    }

    fn scan(&mut self, t: f64, norm: Norm) -> Result<ScanReply, Error> {
        match self.call(&Request::Scan {
            t_bits: t.to_bits(),
            norm,
        })? {
            Response::Scan { acc, below, above } => Ok(ScanReply {
                acc_below: f64::from_bits(acc),
                max_below: f64::from_bits(below),
                min_at_or_above: f64::from_bits(above),
            }),
            _ => Err(Error::Cluster("unexpected node response".into())),
        }
    }

    fn remove_below(&mut self, t: f64) -> Result<(), Error> {
        self.expect_unit(&Request::RemoveBelow { t_bits: t.to_bits() })
    }

    fn tie_terms(&mut self, t: f64) -> Result<Vec<u8>, Error> {
        match self.call(&Request::TieTerms { t_bits: t.to_bits() })? {
            Response::Bytes(b) => Ok(b),
            _ => Err(Error::Cluster("unexpected node response".into())),
        }
    }

    fn remove_keys(&mut self, bytes: &[u8]) -> Result<(), Error> {
        self.expect_unit(&Request::RemoveKeys {
            bytes: bytes.to_vec(),
        })
    }

    fn kth_address(&mut self, k: usize) -> Result<Option<PauliAddress>, Error> {
        match self.call(&Request::KthAddress { k })? {
            Response::MaybeAddress(a) => Ok(a.map(|bytes| PauliAddress::from_bytes_be(&bytes))),
            _ => Err(Error::Cluster("unexpected node response".into())),
        }
    }

    fn extract_tail(&mut self, from: usize) -> Result<Vec<u8>, Error> {
        match self.call(&Request::ExtractTail { from })? {
            Response::Bytes(b) => Ok(b),
            _ => Err(Error::Cluster("unexpected node response".into())),
        }
    }

    fn extract_head(&mut self, k: usize) -> Result<Vec<u8>, Error> {
        match self.call(&Request::ExtractHead { k })? {
            Response::Bytes(b) => Ok(b),
            _ => Err(Error::Cluster("unexpected node response".into())),
        }
    }

    fn dump(&mut self) -> Result<Vec<u8>, Error> {
        match self.call(&Request::Dump)? {
            Response::Bytes(b) => Ok(b),
            _ => Err(Error::Cluster("unexpected node response".into())),
        }
    }

    fn shutdown(&mut self) {
        let _ = write_frame(&mut self.stream, &Request::Shutdown);
        let _ = read_frame::<Response>(&mut self.stream);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

/// Scatters a sum over `r_nodes` socket-backed node threads on localhost.
pub fn scatter_socket(sum: &PauliSum, r_nodes: usize) -> Result<ClusterRun, Error> {
    let partition = PartitionMap::even(sum.n(), r_nodes)?;
    let mut cores: Vec<NodeCore> = (0..r_nodes).map(|id| NodeCore::new(id, sum.n())).collect();
    for (key, &coeff) in sum.iter() {
        let owner = partition.route_key(key);
        cores[owner].local.add(key.clone(), coeff);
    }
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let mut backends: Vec<Box<dyn NodeBackend>> = Vec::with_capacity(r_nodes);
    for core in cores {
        let node_stream = TcpStream::connect(addr)?;
        let (coord_stream, _) = listener.accept()?;
        let handle = std::thread::spawn(move || node_loop(core, node_stream));
        backends.push(Box::new(SocketNode {
            stream: coord_stream,
            handle: Some(handle),
        }));
    }
    Ok(ClusterRun::from_backends(backends, partition))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{synth_xy_trotter, Lattice, TrotterOrdering};

    #[test]
    fn socket_pipeline_matches_inproc() {
        let sum = crate::distributed::tests::random_sum(8, 400, 42);
        let lat = Lattice::chain_open(8).unwrap();
        let circ = synth_xy_trotter(&lat, 1.0, 0.0, 0.2, 1, TrotterOrdering::Symmetric).unwrap();

        let mut inproc = ClusterRun::scatter(&sum, 3).unwrap();
        let mut sock = scatter_socket(&sum, 3).unwrap();
        for slice in circ.slices.iter().rev() {
            inproc.conjugate_slice(slice).unwrap();
            sock.conjugate_slice(slice).unwrap();
        }
        inproc.rebalance().unwrap();
        sock.rebalance().unwrap();
        inproc.truncate(0.05, Norm::L2).unwrap();
        sock.truncate(0.05, Norm::L2).unwrap();

        assert_eq!(
            sock.global_sum().unwrap(),
            inproc.global_sum().unwrap(),
            "transports must agree exactly"
        );
        assert_eq!(sock.message_log_jsonl(), inproc.message_log_jsonl());
        sock.shutdown();
    }
}

//! Simulated multi-node backend: address-interval partitioning of a Pauli
//! sum, routed deduplication, partition resizing, and a distributed
//! binary-search truncation threshold, all with message accounting.
//!
//! The harness is a round-based simulation: node steps run between
//! barriers, every cross-node effect passes through the logged message bus,
//! and no state is shared between nodes. Node state lives behind
//! [`NodeBackend`]; the in-process backend calls [`NodeCore`] directly while
//! the socket transport (see [`socket`]) runs each node on its own thread
//! behind a real TCP stream using the same wire encoding, so both
//! transports execute the identical protocol.

pub mod socket;
pub mod wire;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::backprop::{self, Norm};
use crate::circuit::Slice;
use crate::pauli::{encode_address, PauliAddress, PauliKey, PauliSum};
use crate::Error;

/// Address-interval boundaries `B_0..B_R` with `B_0 = 0`, `B_R = 4^n`;
/// node `r` owns addresses in `[B_r, B_{r+1})`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionMap {
    pub n: usize,
    pub boundaries: Vec<BigUint>,
}

impl PartitionMap {
    /// Even split of the full address space over `r_nodes` intervals.
    pub fn even(n: usize, r_nodes: usize) -> Result<Self, Error> {
        if r_nodes == 0 {
            return Err(Error::Cluster("node count must be positive".into()));
        }
        let end = PauliAddress::space_end(n).bits;
        let mut boundaries = Vec::with_capacity(r_nodes + 1);
        for i in 0..=r_nodes {
            boundaries.push(&end * BigUint::from(i) / BigUint::from(r_nodes));
        }
        let map = PartitionMap { n, boundaries };
        map.validate()?;
        Ok(map)
    }

    pub fn node_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.boundaries.len() < 2 {
            return Err(Error::Cluster("partition needs at least one node".into()));
        }
        if self.boundaries[0] != BigUint::from(0u8) {
            return Err(Error::Cluster("B_0 must be 0".into()));
        }
        if *self.boundaries.last().unwrap() != PauliAddress::space_end(self.n).bits {
            return Err(Error::Cluster("B_R must be 4^n".into()));
        }
        for w in self.boundaries.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Cluster("boundaries must strictly increase".into()));
            }
        }
        Ok(())
    }

    /// Binary search over the R+1 boundaries; O(log R), constant in the
    /// number of stored terms.
    pub fn route(&self, address: &PauliAddress) -> usize {
        // first boundary > address; its predecessor owns the interval
        let idx = self.boundaries.partition_point(|b| *b <= address.bits);
        idx.saturating_sub(1).min(self.node_count() - 1)
    }

    pub fn route_key(&self, key: &PauliKey) -> usize {
        self.route(&encode_address(self.n, key))
    }

    /// Boundaries as fixed-width big-endian byte strings (wire form).
    pub fn boundaries_bytes(&self) -> Vec<Vec<u8>> {
        self.boundaries
            .iter()
            .map(|b| {
                PauliAddress { bits: b.clone() }.to_bytes_be(self.n)
            })
            .collect()
    }

    pub fn from_boundary_bytes(n: usize, bytes: &[Vec<u8>]) -> Result<Self, Error> {
        let boundaries = bytes
            .iter()
            .map(|b| BigUint::from_bytes_be(b))
            .collect::<Vec<_>>();
        let map = PartitionMap { n, boundaries };
        map.validate()?;
        Ok(map)
    }
}

/// Message kinds recorded by the bus. `Dedup`, `Transfer`, `TieGather` and
/// `TieBroadcast` carry term payloads; the rest are O(1) control messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Dedup,
    CountGather,
    CountBroadcast,
    BoundaryQuery,
    BoundaryUpdate,
    BoundaryBroadcast,
    MinMaxGather,
    Proposal,
    Reply,
    TieGather,
    TieBroadcast,
    Transfer,
}

impl MessageKind {
    /// Control messages counted against the partition-resizing O(R) budget;
    /// bulk term movement is accounted separately as `Transfer`.
    pub fn is_rebalance_control(self) -> bool {
        matches!(
            self,
            MessageKind::CountGather
                | MessageKind::CountBroadcast
                | MessageKind::BoundaryQuery
                | MessageKind::BoundaryUpdate
                | MessageKind::BoundaryBroadcast
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageRecord {
    pub from: usize,
    pub to: usize,
    pub kind: MessageKind,
    pub payload_size: usize,
}

/// Snapshot of one node for reporting: its id, local sum and message
/// counters.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    pub local: PauliSum,
    pub sent_messages: u64,
    pub received_messages: u64,
}

/// Result of scanning local coefficients against a proposed threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScanReply {
    /// Accumulated weight (L1: sum |c|, L2: sum c^2) of terms with |c| < t.
    pub acc_below: f64,
    /// Largest |c| < t, 0 if none.
    pub max_below: f64,
    /// Smallest |c| >= t, +inf if none.
    pub min_at_or_above: f64,
}

fn acc_of(c: f64, norm: Norm) -> f64 {
    match norm {
        Norm::L1 => c.abs(),
        Norm::L2 => c * c,
    }
}

/// Per-node engine state plus the local operations the coordinator drives.
/// Both transports execute these verbatim; the socket transport merely
/// moves each call across a TCP stream.
#[derive(Debug, Clone)]
pub struct NodeCore {
    pub id: usize,
    pub n: usize,
    pub local: PauliSum,
}

impl NodeCore {
    pub fn new(id: usize, n: usize) -> Self {
        NodeCore {
            id,
            n,
            local: PauliSum::new(n),
        }
    }

    pub fn len(&self) -> usize {
        self.local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty()
    }

    /// Conjugates the local sum through a slice, keeps owned terms, and
    /// returns wire-encoded batches for every other destination node.
    pub fn conjugate_and_split(
        &mut self,
        slice: &Slice,
        partition: &PartitionMap,
    ) -> Result<Vec<(usize, Vec<u8>)>, Error> {
        let conjugated = backprop::conjugate_slice(&self.local, slice)?;
        let r = partition.node_count();
        let mut batches: Vec<Vec<(PauliKey, f64)>> = vec![Vec::new(); r];
        let mut keep = PauliSum::new(self.n);
        for (key, &coeff) in conjugated.iter() {
            let owner = partition.route_key(key);
            if owner == self.id {
                keep.add(key.clone(), coeff);
            } else {
                batches[owner].push((key.clone(), coeff));
            }
        }
        self.local = keep;
        Ok(batches
            .into_iter()
            .enumerate()
            .filter(|(_, b)| !b.is_empty())
            .map(|(dest, b)| (dest, wire::encode_batch(self.n, &b)))
            .collect())
    }

    pub fn deliver(&mut self, bytes: &[u8]) -> Result<(), Error> {
        for (key, coeff) in wire::decode_batch(self.n, bytes)? {
            self.local.add(key, coeff);
        }
        Ok(())
    }

    pub fn min_max_abs(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (_, &c) in self.local.iter() {
            lo = lo.min(c.abs());
            hi = hi.max(c.abs());
        }
        (lo, hi)
    }

    pub fn acc_total(&self, norm: Norm) -> f64 {
        self.local.iter().map(|(_, &c)| acc_of(c, norm)).sum()
    }

    pub fn scan(&self, t: f64, norm: Norm) -> ScanReply {
        let mut reply = ScanReply {
            acc_below: 0.0,
            max_below: 0.0,
            min_at_or_above: f64::INFINITY,
        };
        for (_, &c) in self.local.iter() {
            let a = c.abs();
            if a < t {
                reply.acc_below += acc_of(c, norm);
                reply.max_below = reply.max_below.max(a);
            } else {
                reply.min_at_or_above = reply.min_at_or_above.min(a);
            }
        }
        reply
    }

    pub fn remove_below(&mut self, t: f64) {
        let dropping: Vec<PauliKey> = self
            .local
            .iter()
            .filter(|(_, &c)| c.abs() < t)
            .map(|(k, _)| k.clone())
            .collect();
        for k in dropping {
            self.local.remove(&k);
        }
    }

    /// Terms whose |coefficient| equals the tie value, wire encoded.
    pub fn tie_terms(&self, t: f64) -> Vec<u8> {
        let ties: Vec<(PauliKey, f64)> = self
            .local
            .iter()
            .filter(|(_, &c)| c.abs() == t)
            .map(|(k, &c)| (k.clone(), c))
            .collect();
        wire::encode_batch(self.n, &ties)
    }

    pub fn remove_keys(&mut self, bytes: &[u8]) -> Result<(), Error> {
        for (key, _) in wire::decode_batch(self.n, bytes)? {
            self.local.remove(&key);
        }
        Ok(())
    }

    /// Address of the k-th smallest local term (0-indexed).
    pub fn kth_address(&self, k: usize) -> Option<PauliAddress> {
        self.local
            .keys()
            .nth(k)
            .map(|key| encode_address(self.n, key))
    }

    /// Removes and returns all local terms from the k-th onward.
    pub fn extract_tail(&mut self, from: usize) -> Vec<u8> {
        let keys: Vec<PauliKey> = self.local.keys().skip(from).cloned().collect();
        let mut moving = Vec::with_capacity(keys.len());
        for k in keys {
            let c = self.local.remove(&k).expect("key present");
            moving.push((k, c));
        }
        wire::encode_batch(self.n, &moving)
    }

    /// Removes and returns the first k local terms (ascending address).
    pub fn extract_head(&mut self, k: usize) -> Vec<u8> {
        let keys: Vec<PauliKey> = self.local.keys().take(k).cloned().collect();
        let mut moving = Vec::with_capacity(keys.len());
        for key in keys {
            let c = self.local.remove(&key).expect("key present");
            moving.push((key, c));
        }
        wire::encode_batch(self.n, &moving)
    }

    pub fn dump(&self) -> Vec<u8> {
        let all: Vec<(PauliKey, f64)> = self.local.iter().map(|(k, &c)| (k.clone(), c)).collect();
        wire::encode_batch(self.n, &all)
    }
}

/// Synchronous request/response surface the coordinator drives.
pub trait NodeBackend {
    fn conjugate_and_split(
        &mut self,
        slice: &Slice,
        partition: &PartitionMap,
    ) -> Result<Vec<(usize, Vec<u8>)>, Error>;
    fn deliver(&mut self, bytes: &[u8]) -> Result<(), Error>;
    fn len(&mut self) -> Result<usize, Error>;
    fn min_max_abs(&mut self) -> Result<(f64, f64), Error>;
    fn acc_total(&mut self, norm: Norm) -> Result<f64, Error>;
    fn scan(&mut self, t: f64, norm: Norm) -> Result<ScanReply, Error>;
    fn remove_below(&mut self, t: f64) -> Result<(), Error>;
    fn tie_terms(&mut self, t: f64) -> Result<Vec<u8>, Error>;
    fn remove_keys(&mut self, bytes: &[u8]) -> Result<(), Error>;
    fn kth_address(&mut self, k: usize) -> Result<Option<PauliAddress>, Error>;
    fn extract_tail(&mut self, from: usize) -> Result<Vec<u8>, Error>;
    fn extract_head(&mut self, k: usize) -> Result<Vec<u8>, Error>;
    fn dump(&mut self) -> Result<Vec<u8>, Error>;
    fn shutdown(&mut self) {}
}

/// In-process backend: direct calls into [`NodeCore`].
pub struct InprocNode(pub NodeCore);

impl NodeBackend for InprocNode {
    fn conjugate_and_split(
        &mut self,
        slice: &Slice,
        partition: &PartitionMap,
    ) -> Result<Vec<(usize, Vec<u8>)>, Error> {
        self.0.conjugate_and_split(slice, partition)
    }
    fn deliver(&mut self, bytes: &[u8]) -> Result<(), Error> {
        self.0.deliver(bytes)
    }
    fn len(&mut self) -> Result<usize, Error> {
        Ok(self.0.len())
    }
    fn min_max_abs(&mut self) -> Result<(f64, f64), Error> {
        Ok(self.0.min_max_abs())
    }
    fn acc_total(&mut self, norm: Norm) -> Result<f64, Error> {
        Ok(self.0.acc_total(norm))
    }
    fn scan(&mut self, t: f64, norm: Norm) -> Result<ScanReply, Error> {
        Ok(self.0.scan(t, norm))
    }
    fn remove_below(&mut self, t: f64) -> Result<(), Error> {
        self.0.remove_below(t);
        Ok(())
    }
    fn tie_terms(&mut self, t: f64) -> Result<Vec<u8>, Error> {
        Ok(self.0.tie_terms(t))
    }
    fn remove_keys(&mut self, bytes: &[u8]) -> Result<(), Error> {
        self.0.remove_keys(bytes)
    }
    fn kth_address(&mut self, k: usize) -> Result<Option<PauliAddress>, Error> {
        Ok(self.0.kth_address(k))
    }
    fn extract_tail(&mut self, from: usize) -> Result<Vec<u8>, Error> {
        Ok(self.0.extract_tail(from))
    }
    fn extract_head(&mut self, k: usize) -> Result<Vec<u8>, Error> {
        Ok(self.0.extract_head(k))
    }
    fn dump(&mut self) -> Result<Vec<u8>, Error> {
        Ok(self.0.dump())
    }
}

/// The whole simulated cluster. Deterministic: identical inputs replay an
/// identical message log regardless of host scheduling, because node steps
/// run in a fixed round order between barriers.
pub struct ClusterRun {
    backends: Vec<Box<dyn NodeBackend>>,
    pub partition: PartitionMap,
    pub message_log: Vec<MessageRecord>,
    pub sent_messages: Vec<u64>,
    pub received_messages: Vec<u64>,
}

impl ClusterRun {
    /// Scatters a sum over `r_nodes` evenly partitioned in-process nodes.
    pub fn scatter(sum: &PauliSum, r_nodes: usize) -> Result<Self, Error> {
        let partition = PartitionMap::even(sum.n(), r_nodes)?;
        let mut cores: Vec<NodeCore> = (0..r_nodes).map(|id| NodeCore::new(id, sum.n())).collect();
        for (key, &coeff) in sum.iter() {
            let owner = partition.route_key(key);
            cores[owner].local.add(key.clone(), coeff);
        }
        Ok(Self::from_backends(
            cores
                .into_iter()
                .map(|c| Box::new(InprocNode(c)) as Box<dyn NodeBackend>)
                .collect(),
            partition,
        ))
    }

    pub fn from_backends(backends: Vec<Box<dyn NodeBackend>>, partition: PartitionMap) -> Self {
        let r = backends.len();
        ClusterRun {
            backends,
            partition,
            message_log: Vec::new(),
            sent_messages: vec![0; r],
            received_messages: vec![0; r],
        }
    }

    pub fn node_count(&self) -> usize {
        self.backends.len()
    }

    fn n(&self) -> usize {
        self.partition.n
    }

    fn log(&mut self, from: usize, to: usize, kind: MessageKind, payload_size: usize) {
        self.sent_messages[from] += 1;
        self.received_messages[to] += 1;
        self.message_log.push(MessageRecord {
            from,
            to,
            kind,
            payload_size,
        });
    }

    /// Per-node term counts.
    pub fn loads(&mut self) -> Result<Vec<usize>, Error> {
        self.backends.iter_mut().map(|b| b.len()).collect()
    }

    pub fn total_terms(&mut self) -> Result<usize, Error> {
        Ok(self.loads()?.into_iter().sum())
    }

    /// Merges all node-local sums into one global sum.
    pub fn global_sum(&mut self) -> Result<PauliSum, Error> {
        let n = self.n();
        let mut out = PauliSum::new(n);
        for backend in &mut self.backends {
            for (key, coeff) in wire::decode_batch(n, &backend.dump()?)? {
                out.add(key, coeff);
            }
        }
        Ok(out)
    }

    /// Reporting snapshot of every node.
    pub fn node_states(&mut self) -> Result<Vec<NodeState>, Error> {
        let n = self.n();
        let mut out = Vec::with_capacity(self.backends.len());
        for (id, backend) in self.backends.iter_mut().enumerate() {
            let mut local = PauliSum::new(n);
            for (key, coeff) in wire::decode_batch(n, &backend.dump()?)? {
                local.add(key, coeff);
            }
            out.push(NodeState {
                node_id: id,
                local,
                sent_messages: self.sent_messages[id],
                received_messages: self.received_messages[id],
            });
        }
        Ok(out)
    }

    /// Ownership invariant: every local key lies inside its node's interval.
    pub fn check_ownership(&mut self) -> Result<(), Error> {
        let n = self.n();
        let partition = self.partition.clone();
        for (id, backend) in self.backends.iter_mut().enumerate() {
            for (key, _) in wire::decode_batch(n, &backend.dump()?)? {
                if partition.route_key(&key) != id {
                    return Err(Error::Cluster(format!(
                        "node {id} holds a key outside its interval"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Backpropagates one circuit slice on all nodes in parallel over their
    /// disjoint term sets, then routes emitted terms to their owners. Each
    /// ordered node pair exchanges at most one batched message; arriving
    /// duplicates are coefficient-summed.
    pub fn conjugate_slice(&mut self, slice: &Slice) -> Result<(), Error> {
        let r = self.node_count();
        let partition = self.partition.clone();
        let mut outboxes: Vec<Vec<(usize, Vec<u8>)>> = Vec::with_capacity(r);
        for backend in &mut self.backends {
            outboxes.push(backend.conjugate_and_split(slice, &partition)?);
        }
        // barrier: deliver the batched messages
        for (from, batches) in outboxes.into_iter().enumerate() {
            for (to, bytes) in batches {
                self.log(from, to, MessageKind::Dedup, bytes.len());
                self.backends[to].deliver(&bytes)?;
            }
        }
        Ok(())
    }

    /// Partition resizing: broadcast per-node counts (2R messages), adjust
    /// boundaries left to right so every finalized interval holds
    /// `floor(L/R)` or `ceil(L/R)` terms (1-2 control messages per
    /// boundary), then broadcast the final boundaries (2R messages). Term
    /// movement is logged separately as `Transfer` records.
    pub fn rebalance(&mut self) -> Result<(), Error> {
        let r = self.node_count();
        if r == 1 {
            return Ok(());
        }
        // count phase: all-to-one then one-to-all
        let loads = self.loads()?;
        for from in 1..r {
            self.log(from, 0, MessageKind::CountGather, 8);
        }
        for to in 1..r {
            self.log(0, to, MessageKind::CountBroadcast, 8 * r);
        }
        let total: usize = loads.iter().sum();
        let mut boundaries = self.partition.boundaries.clone();
        if total > 0 {
            let quota = |idx: usize| total / r + usize::from(idx < total % r);
            for idx in 0..r - 1 {
                let current = self.backends[idx].len()?;
                let want = quota(idx);
                match current.cmp(&want) {
                    std::cmp::Ordering::Equal => continue,
                    std::cmp::Ordering::Greater => {
                        // node idx computes the new upper boundary from its
                        // own order statistics and ships the surplus right
                        let cut = self.backends[idx]
                            .kth_address(want)?
                            .expect("surplus node has > want terms");
                        boundaries[idx + 1] = cut.bits.clone();
                        self.log(idx, idx + 1, MessageKind::BoundaryUpdate, 16);
                        let bytes = self.backends[idx].extract_tail(want)?;
                        self.log(idx, idx + 1, MessageKind::Transfer, bytes.len());
                        self.backends[idx + 1].deliver(&bytes)?;
                    }
                    std::cmp::Ordering::Less => {
                        // deficit: the right-hand neighbour computes the
                        // boundary that tops node idx up to quota; with a
                        // heavily skewed layout the pulled range may drain
                        // several right-hand intervals
                        let deficit = want - current;
                        self.log(idx, idx + 1, MessageKind::BoundaryQuery, 8);
                        let mut pulled = 0usize;
                        let mut donor = idx + 1;
                        let mut last_addr: Option<PauliAddress> = None;
                        while pulled < deficit && donor < r {
                            let take = deficit - pulled;
                            let avail = self.backends[donor].len()?;
                            let taking = take.min(avail);
                            if taking > 0 {
                                last_addr = self.backends[donor].kth_address(taking - 1)?;
                                let bytes = self.backends[donor].extract_head(taking)?;
                                self.log(donor, idx, MessageKind::Transfer, bytes.len());
                                self.backends[idx].deliver(&bytes)?;
                                pulled += taking;
                            }
                            donor += 1;
                        }
                        if pulled < deficit {
                            return Err(Error::Cluster("not enough terms to meet quota".into()));
                        }
                        self.log(idx + 1, idx, MessageKind::BoundaryUpdate, 16);
                        boundaries[idx + 1] =
                            last_addr.expect("pulled at least one term").bits + BigUint::from(1u8);
                    }
                }
                // keep interior boundaries strictly increasing after pulls
                // that drained whole intervals
                for j in idx + 2..r {
                    if boundaries[j] <= boundaries[j - 1] {
                        boundaries[j] = &boundaries[j - 1] + BigUint::from(1u8);
                    }
                }
            }
        }
        // final boundary broadcast
        for from in 1..r {
            self.log(from, 0, MessageKind::BoundaryBroadcast, 16 * (r + 1));
        }
        for to in 1..r {
            self.log(0, to, MessageKind::BoundaryBroadcast, 16 * (r + 1));
        }
        self.partition.boundaries = boundaries;
        self.partition.validate()?;
        debug_assert!(self.check_ownership().is_ok());
        Ok(())
    }

    /// Distributed truncation: the master gathers per-node coefficient
    /// ranges, bisects on a threshold with one proposal broadcast and one
    /// reply gather per round, removes everything strictly below the
    /// bracketed stop value, and resolves the tie class at the stop value
    /// by ascending address to match the centralized
    /// [`backprop::truncate`] exactly.
    ///
    /// Returns the removed weight and the number of proposal rounds.
    pub fn truncate(&mut self, budget: f64, norm: Norm) -> Result<(f64, usize), Error> {
        if budget < 0.0 || !budget.is_finite() {
            return Err(Error::NegativeBudget(budget));
        }
        let r = self.node_count();
        // gather (min, max, count, total weight) per node
        let mut bracket_min = f64::INFINITY;
        let mut bracket_max = 0.0f64;
        let mut total_acc = 0.0f64;
        let mut total_count = 0usize;
        for id in 0..r {
            let (lo, hi) = self.backends[id].min_max_abs()?;
            bracket_min = bracket_min.min(lo);
            bracket_max = bracket_max.max(hi);
            total_acc += self.backends[id].acc_total(norm)?;
            total_count += self.backends[id].len()?;
            if id != 0 {
                self.log(id, 0, MessageKind::MinMaxGather, 32);
            }
        }
        let cap = match norm {
            Norm::L1 => budget,
            Norm::L2 => budget * budget,
        };
        let weight_of = |acc: f64| match norm {
            Norm::L1 => acc,
            Norm::L2 => acc.sqrt(),
        };
        if budget == 0.0 || total_count == 0 {
            for to in 1..r {
                self.log(0, to, MessageKind::Proposal, 8);
            }
            return Ok((0.0, 0));
        }
        if total_acc <= cap {
            // the whole sum fits in the budget: remove everything
            for to in 1..r {
                self.log(0, to, MessageKind::Proposal, 8);
            }
            for backend in &mut self.backends {
                backend.remove_below(f64::INFINITY)?;
            }
            return Ok((weight_of(total_acc), 1));
        }

        // Bisection on the threshold value. F(t) accumulates |c| (or c^2)
        // over all |c| < t; the invariant is F(lo) <= cap < F(hi). The
        // bracket [bracket_min, bracket_max] tracks the smallest and
        // largest coefficient magnitudes still undecided; replies carry the
        // nearest actual values around each proposal so the bracket snaps
        // onto real data. The search stops when one magnitude class
        // remains: the stop class, whose ties are resolved by address.
        let mut acc_lo = 0.0f64; // F just below bracket_min
        let mut rounds = 0usize;
        while bracket_min < bracket_max {
            let mut mid = bracket_min + (bracket_max - bracket_min) / 2.0;
            if mid <= bracket_min {
                // float-adjacent classes: propose the upper one directly
                mid = bracket_max;
            }
            rounds += 1;
            for to in 1..r {
                self.log(0, to, MessageKind::Proposal, 8);
            }
            let mut acc_mid = 0.0f64;
            let mut below_mid = 0.0f64;
            let mut above_mid = f64::INFINITY;
            for id in 0..r {
                let reply = self.backends[id].scan(mid, norm)?;
                acc_mid += reply.acc_below;
                below_mid = below_mid.max(reply.max_below);
                above_mid = above_mid.min(reply.min_at_or_above);
                if id != 0 {
                    self.log(id, 0, MessageKind::Reply, 32);
                }
            }
            if acc_mid <= cap {
                // everything below mid fits; the stop class is >= above_mid
                bracket_min = above_mid;
                acc_lo = acc_mid;
            } else {
                // too much below mid; the stop class is <= below_mid
                bracket_max = below_mid;
            }
            if rounds > 200 {
                return Err(Error::Cluster("truncation bisection diverged".into()));
            }
        }
        let tie_value = bracket_min;

        // remove everything strictly below the stop class
        for backend in &mut self.backends {
            backend.remove_below(tie_value)?;
        }
        // gather the tie class to the master and select by ascending address
        let n = self.n();
        let mut ties: Vec<(usize, PauliKey, f64)> = Vec::new();
        for id in 0..r {
            let bytes = self.backends[id].tie_terms(tie_value)?;
            if id != 0 && !bytes.is_empty() {
                self.log(id, 0, MessageKind::TieGather, bytes.len());
            }
            for (key, coeff) in wire::decode_batch(n, &bytes)? {
                ties.push((id, key, coeff));
            }
        }
        ties.sort_by(|a, b| a.1.cmp(&b.1));
        let mut removed_acc = acc_lo;
        let mut selected: Vec<(usize, Vec<(PauliKey, f64)>)> = (0..r).map(|i| (i, vec![])).collect();
        for (owner, key, coeff) in ties {
            let next = removed_acc + acc_of(coeff, norm);
            if next <= cap {
                removed_acc = next;
                selected[owner].1.push((key, coeff));
            } else {
                break;
            }
        }
        for (owner, terms) in selected {
            if terms.is_empty() {
                continue;
            }
            let bytes = wire::encode_batch(n, &terms);
            if owner != 0 {
                self.log(0, owner, MessageKind::TieBroadcast, bytes.len());
            }
            self.backends[owner].remove_keys(&bytes)?;
        }
        Ok((weight_of(removed_acc), rounds))
    }

    /// Message-log entries of one kind.
    pub fn count_kind(&self, kind: MessageKind) -> usize {
        self.message_log.iter().filter(|m| m.kind == kind).count()
    }

    /// Serializes the message log as JSON lines for audit.
    pub fn message_log_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.message_log {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn shutdown(&mut self) {
        for backend in &mut self.backends {
            backend.shutdown();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backprop::truncate as central_truncate;
    use crate::circuit::{synth_xy_trotter, Lattice, TrotterOrdering};
    use crate::pauli::PauliTerm;

    pub(crate) fn random_sum(n: usize, terms: usize, seed: u64) -> PauliSum {
        // xorshift-filled deterministic sum
        let mut state = seed.max(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let mut sum = PauliSum::new(n);
        while sum.len() < terms {
            let mut key = PauliKey::identity(n);
            for q in 0..n {
                match next() % 4 {
                    1 => key.x.set(q, true),
                    2 => key.z.set(q, true),
                    3 => {
                        key.x.set(q, true);
                        key.z.set(q, true);
                    }
                    _ => {}
                }
            }
            if key.is_identity() {
                continue;
            }
            let coeff = ((next() % 2_000_001) as f64 - 1_000_000.0) / 1_000_000.0;
            if coeff != 0.0 {
                sum.add(key, coeff);
            }
        }
        sum
    }

    #[test]
    fn route_boundary_convention() {
        let map = PartitionMap::even(4, 4).unwrap();
        // address exactly at a boundary belongs to the right-hand node
        for r in 0..4 {
            let addr = PauliAddress {
                bits: map.boundaries[r].clone(),
            };
            assert_eq!(map.route(&addr), r);
        }
        // 4 qubits, 4 nodes, even split of [0, 256): address 3 (Y on
        // qubit 0) lands on node 0
        let addr = PauliAddress {
            bits: BigUint::from(3u8),
        };
        assert_eq!(map.route(&addr), 0);
        // single node owns everything
        let map1 = PartitionMap::even(4, 1).unwrap();
        assert_eq!(map1.route(&addr), 0);
    }

    #[test]
    fn single_node_matches_plain_conjugation() {
        let lat = Lattice::chain_open(6).unwrap();
        let circ = synth_xy_trotter(&lat, 1.0, 0.0, 0.2, 2, TrotterOrdering::Symmetric).unwrap();
        let obs = PauliSum::from_term(PauliTerm::parse("IIZIII", 1.0).unwrap());
        let mut cluster = ClusterRun::scatter(&obs, 1).unwrap();
        let mut plain = obs.clone();
        for slice in circ.slices.iter().rev() {
            cluster.conjugate_slice(slice).unwrap();
            plain = backprop::conjugate_slice(&plain, slice).unwrap();
        }
        assert_eq!(cluster.global_sum().unwrap(), plain);
        assert!(cluster.message_log.is_empty());
    }

    #[test]
    fn multi_node_equivalence_and_message_bound() {
        let lat = Lattice::chain_open(8).unwrap();
        let circ = synth_xy_trotter(&lat, 1.0, 0.0, 0.3, 3, TrotterOrdering::Symmetric).unwrap();
        let obs = PauliSum::from_term(PauliTerm::parse("IIIZIIII", 1.0).unwrap());
        for r in [2usize, 4, 8] {
            let mut cluster = ClusterRun::scatter(&obs, r).unwrap();
            let mut plain = obs.clone();
            for slice in circ.slices.iter().rev() {
                let log_start = cluster.message_log.len();
                cluster.conjugate_slice(slice).unwrap();
                plain = backprop::conjugate_slice(&plain, slice).unwrap();
                let dedup = cluster.message_log[log_start..]
                    .iter()
                    .filter(|m| m.kind == MessageKind::Dedup)
                    .count();
                assert!(dedup <= r * (r - 1), "r={r}: dedup {dedup}");
            }
            let global = cluster.global_sum().unwrap();
            assert!(global.max_coeff_distance(&plain) < 1e-12, "r={r}");
            cluster.check_ownership().unwrap();
        }
    }

    #[test]
    fn rebalance_from_skewed_layout() {
        // all terms initially on node 0
        let sum = random_sum(6, 200, 11);
        let r = 4;
        let end = PauliAddress::space_end(6).bits;
        let mut boundaries = vec![BigUint::from(0u8)];
        for i in 1..r {
            boundaries.push(&end - BigUint::from((r - i) as u8));
        }
        boundaries.push(end);
        let partition = PartitionMap { n: 6, boundaries };
        partition.validate().unwrap();
        let mut cores: Vec<NodeCore> = (0..r).map(|id| NodeCore::new(id, 6)).collect();
        for (k, &c) in sum.iter() {
            cores[partition.route_key(k)].local.add(k.clone(), c);
        }
        assert_eq!(cores[0].len(), 200);
        let mut cluster = ClusterRun::from_backends(
            cores
                .into_iter()
                .map(|c| Box::new(InprocNode(c)) as Box<dyn NodeBackend>)
                .collect(),
            partition,
        );
        cluster.rebalance().unwrap();
        let loads = cluster.loads().unwrap();
        for &l in &loads {
            assert!((l as i64 - 50).unsigned_abs() <= 1, "loads {loads:?}");
        }
        let control = cluster
            .message_log
            .iter()
            .filter(|m| m.kind.is_rebalance_control())
            .count();
        assert!(control <= 6 * r, "control messages {control}");
        assert_eq!(cluster.global_sum().unwrap(), sum);
        cluster.check_ownership().unwrap();
    }

    #[test]
    fn rebalance_balanced_input_stays_within_one() {
        let sum = random_sum(8, 1000, 23);
        let mut cluster = ClusterRun::scatter(&sum, 4).unwrap();
        cluster.rebalance().unwrap();
        let loads = cluster.loads().unwrap();
        for &l in &loads {
            assert!((l as i64 - 250).unsigned_abs() <= 1, "loads {loads:?}");
        }
        assert_eq!(cluster.global_sum().unwrap(), sum);
    }

    #[test]
    fn distributed_truncate_matches_centralized() {
        let sum = random_sum(10, 10_000, 5);
        for r in [2usize, 4, 8] {
            for norm in [Norm::L1, Norm::L2] {
                let budget = match norm {
                    Norm::L1 => 0.7,
                    Norm::L2 => 0.01,
                };
                let (central, central_w, _) = central_truncate(&sum, budget, norm).unwrap();
                let mut cluster = ClusterRun::scatter(&sum, r).unwrap();
                let (w, rounds) = cluster.truncate(budget, norm).unwrap();
                let global = cluster.global_sum().unwrap();
                assert_eq!(global, central, "r={r} norm={norm:?}");
                assert!((w - central_w).abs() < 1e-9, "r={r}: {w} vs {central_w}");
                let bound = (10_000f64).log2().ceil() as usize + 2;
                assert!(rounds <= bound, "r={r}: rounds {rounds} > {bound}");
            }
        }
    }

    #[test]
    fn distributed_truncate_zero_budget() {
        let sum = random_sum(6, 100, 3);
        let mut cluster = ClusterRun::scatter(&sum, 4).unwrap();
        let (w, rounds) = cluster.truncate(0.0, Norm::L2).unwrap();
        assert_eq!(w, 0.0);
        assert_eq!(rounds, 0);
        assert_eq!(cluster.global_sum().unwrap(), sum);
    }

    #[test]
    fn deterministic_replay() {
        let sum = random_sum(8, 500, 77);
        let lat = Lattice::chain_open(8).unwrap();
        let circ = synth_xy_trotter(&lat, 1.0, 0.0, 0.2, 1, TrotterOrdering::Symmetric).unwrap();
        let run = |sum: &PauliSum| {
            let mut cluster = ClusterRun::scatter(sum, 4).unwrap();
            for slice in circ.slices.iter().rev() {
                cluster.conjugate_slice(slice).unwrap();
            }
            cluster.rebalance().unwrap();
            cluster.truncate(0.05, Norm::L2).unwrap();
            cluster.message_log_jsonl()
        };
        assert_eq!(run(&sum), run(&sum));
    }
}

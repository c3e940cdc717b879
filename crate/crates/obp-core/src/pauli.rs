//! Symplectic representation and algebra of n-qubit Pauli operators and
//! sparse real-coefficient Pauli sums.
//!
//! A Pauli term is stored as two packed bit vectors: `z_bits` marks the
//! presence of a Z factor on each qubit, `x_bits` an X factor; both set means
//! Y. The represented operator is the Hermitian canonical Pauli
//! `(-i)^{|z&x|} Z^z X^x` per qubit product (equivalently `i^{|z&x|} X^x Z^z`),
//! so the per-qubit code is (z,x): (0,0) -> I, (0,1) -> X, (1,0) -> Z,
//! (1,1) -> Y and Hermitian observables keep real coefficients under every
//! operation in this crate.
//!
//! Qubit 0 occupies the least-significant bit of each vector. The global
//! address of a Pauli is the 2n-bit integer formed by concatenating z above
//! x, which totally orders all 4^n Paulis.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use smallvec::{smallvec, SmallVec};

use crate::Error;

/// Packed bit vector in 64-bit limbs, limb 0 holding bits 0..64.
///
/// All vectors belonging to the same operator share the same limb count and
/// carry no stray bits above the qubit count.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bits {
    limbs: SmallVec<[u64; 2]>,
}

impl Bits {
    pub fn zeros(n: usize) -> Self {
        Bits {
            limbs: smallvec![0u64; Self::limb_count(n)],
        }
    }

    pub fn limb_count(n: usize) -> usize {
        n.div_ceil(64).max(1)
    }

    pub fn get(&self, bit: usize) -> bool {
        (self.limbs[bit / 64] >> (bit % 64)) & 1 == 1
    }

    pub fn set(&mut self, bit: usize, value: bool) {
        let mask = 1u64 << (bit % 64);
        if value {
            self.limbs[bit / 64] |= mask;
        } else {
            self.limbs[bit / 64] &= !mask;
        }
    }

    pub fn flip(&mut self, bit: usize) {
        self.limbs[bit / 64] ^= 1u64 << (bit % 64);
    }

    pub fn is_zero(&self) -> bool {
        self.limbs.iter().all(|&l| l == 0)
    }

    pub fn xor_assign(&mut self, other: &Bits) {
        for (a, b) in self.limbs.iter_mut().zip(&other.limbs) {
            *a ^= b;
        }
    }

    /// Population count of the bitwise AND with `other`.
    pub fn and_weight(&self, other: &Bits) -> u32 {
        self.limbs
            .iter()
            .zip(&other.limbs)
            .map(|(a, b)| (a & b).count_ones())
            .sum()
    }

    pub fn weight(&self) -> u32 {
        self.limbs.iter().map(|l| l.count_ones()).sum()
    }

    pub fn or_with(&self, other: &Bits) -> Bits {
        Bits {
            limbs: self
                .limbs
                .iter()
                .zip(&other.limbs)
                .map(|(a, b)| a | b)
                .collect(),
        }
    }

    fn limbs(&self) -> &[u64] {
        &self.limbs
    }
}

impl PartialOrd for Bits {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bits {
    /// Orders by the big-integer value of the bit vector.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        debug_assert_eq!(self.limbs.len(), other.limbs.len());
        self.limbs.iter().rev().cmp(other.limbs.iter().rev())
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for limb in self.limbs.iter().rev() {
            write!(f, "{limb:016x}")?;
        }
        Ok(())
    }
}

/// Product phase of two canonical Hermitian Paulis, a power of i.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    One,
    I,
    MinusOne,
    MinusI,
}

impl Phase {
    fn from_quarter(q: u32) -> Self {
        match q % 4 {
            0 => Phase::One,
            1 => Phase::I,
            2 => Phase::MinusOne,
            _ => Phase::MinusI,
        }
    }

    pub fn quarter(self) -> u32 {
        match self {
            Phase::One => 0,
            Phase::I => 1,
            Phase::MinusOne => 2,
            Phase::MinusI => 3,
        }
    }

    pub fn times_i(self) -> Self {
        Phase::from_quarter(self.quarter() + 1)
    }

    /// The real sign of a phase known to be ±1.
    pub fn real_sign(self) -> Option<f64> {
        match self {
            Phase::One => Some(1.0),
            Phase::MinusOne => Some(-1.0),
            _ => None,
        }
    }
}

/// The (z, x) bit-vector pair identifying one n-qubit Pauli.
///
/// Ordering follows the global address (z block above x block), so a
/// `BTreeMap` keyed by `PauliKey` iterates in address order.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PauliKey {
    pub z: Bits,
    pub x: Bits,
}

impl PauliKey {
    pub fn identity(n: usize) -> Self {
        PauliKey {
            z: Bits::zeros(n),
            x: Bits::zeros(n),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.z.is_zero() && self.x.is_zero()
    }

    /// Single-qubit X on `qubit`.
    pub fn single_x(n: usize, qubit: usize) -> Self {
        let mut k = Self::identity(n);
        k.x.set(qubit, true);
        k
    }

    /// Single-qubit Y on `qubit`.
    pub fn single_y(n: usize, qubit: usize) -> Self {
        let mut k = Self::identity(n);
        k.z.set(qubit, true);
        k.x.set(qubit, true);
        k
    }

    /// Single-qubit Z on `qubit`.
    pub fn single_z(n: usize, qubit: usize) -> Self {
        let mut k = Self::identity(n);
        k.z.set(qubit, true);
        k
    }

    /// Parses a Pauli string over {I, X, Y, Z} with qubit 0 leftmost.
    pub fn parse(s: &str) -> Result<(usize, Self), Error> {
        if s.is_empty() {
            return Err(Error::EmptyPauli);
        }
        let n = s.chars().count();
        let mut key = Self::identity(n);
        for (q, c) in s.chars().enumerate() {
            match c {
                'I' => {}
                'X' => key.x.set(q, true),
                'Y' => {
                    key.z.set(q, true);
                    key.x.set(q, true);
                }
                'Z' => key.z.set(q, true),
                other => return Err(Error::InvalidPauliChar(other)),
            }
        }
        Ok((n, key))
    }

    /// Formats as a string over {I, X, Y, Z} with qubit 0 leftmost.
    pub fn to_string_n(&self, n: usize) -> String {
        (0..n)
            .map(|q| match (self.z.get(q), self.x.get(q)) {
                (false, false) => 'I',
                (false, true) => 'X',
                (true, false) => 'Z',
                (true, true) => 'Y',
            })
            .collect()
    }

    /// Qubits on which the Pauli acts non-trivially.
    pub fn support(&self, n: usize) -> Vec<usize> {
        (0..n)
            .filter(|&q| self.z.get(q) || self.x.get(q))
            .collect()
    }

    /// Number of Y factors mod 4 enters product phases via `|z & x|`.
    fn y_weight(&self) -> u32 {
        self.z.and_weight(&self.x)
    }
}

impl fmt::Debug for PauliKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PauliKey(z={:?}, x={:?})", self.z, self.x)
    }
}

/// One n-qubit Pauli with a real coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliTerm {
    pub n: usize,
    pub key: PauliKey,
    pub coeff: f64,
}

impl PauliTerm {
    pub fn new(n: usize, key: PauliKey, coeff: f64) -> Self {
        PauliTerm { n, key, coeff }
    }

    pub fn parse(s: &str, coeff: f64) -> Result<Self, Error> {
        let (n, key) = PauliKey::parse(s)?;
        Ok(PauliTerm { n, key, coeff })
    }
}

/// The 2n-bit global address of a Pauli: z bits concatenated above x bits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PauliAddress {
    pub bits: BigUint,
}

impl PauliAddress {
    pub fn zero() -> Self {
        PauliAddress {
            bits: BigUint::from(0u8),
        }
    }

    /// The exclusive upper end of the address space, 4^n.
    pub fn space_end(n: usize) -> Self {
        PauliAddress {
            bits: BigUint::from(1u8) << (2 * n),
        }
    }

    /// Big-endian byte encoding padded to the fixed width for n qubits.
    pub fn to_bytes_be(&self, n: usize) -> Vec<u8> {
        let width = (2 * n).div_ceil(8) + 1;
        let raw = self.bits.to_bytes_be();
        let mut out = vec![0u8; width.saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }

    pub fn from_bytes_be(bytes: &[u8]) -> Self {
        PauliAddress {
            bits: BigUint::from_bytes_be(bytes),
        }
    }
}

/// Encodes a key into its 2n-bit address (z in the high half).
pub fn encode_address(n: usize, key: &PauliKey) -> PauliAddress {
    let mut v = BigUint::from(0u8);
    for (i, &limb) in key.z.limbs().iter().enumerate() {
        v |= BigUint::from(limb) << (n + 64 * i);
    }
    for (i, &limb) in key.x.limbs().iter().enumerate() {
        v |= BigUint::from(limb) << (64 * i);
    }
    // mask x block to n bits (z limbs shifted up cannot collide below n)
    PauliAddress { bits: v }
}

/// Decodes a 2n-bit address back into its key.
pub fn decode_address(n: usize, address: &PauliAddress) -> PauliKey {
    let mut key = PauliKey::identity(n);
    for bit in 0..n {
        if address.bits.bit(bit as u64) {
            key.x.set(bit, true);
        }
        if address.bits.bit((n + bit) as u64) {
            key.z.set(bit, true);
        }
    }
    key
}

/// Product of two canonical Hermitian Paulis: `p * q = phase * key`.
///
/// With `P = (-i)^{|z&x|} Z^z X^x` the product phase is
/// `i^(w3 - w1 - w2 + 2|x1&z2|)` where `w` counts Y factors.
pub fn multiply(p: &PauliKey, q: &PauliKey) -> (PauliKey, Phase) {
    let w1 = p.y_weight();
    let w2 = q.y_weight();
    let cross = p.x.and_weight(&q.z);
    let mut z = p.z.clone();
    z.xor_assign(&q.z);
    let mut x = p.x.clone();
    x.xor_assign(&q.x);
    let key = PauliKey { z, x };
    let w3 = key.y_weight();
    // quarter = w3 - w1 - w2 + 2*cross  (mod 4)
    let quarter = (w3 + 4 * (w1 + w2) - w1 - w2 + 2 * cross) % 4;
    (key, Phase::from_quarter(quarter))
}

/// Symplectic inner product test: true iff the operators commute.
pub fn commutes(p: &PauliKey, q: &PauliKey) -> bool {
    (p.z.and_weight(&q.x) + p.x.and_weight(&q.z)) % 2 == 0
}

/// True iff on every qubit the single-qubit factors are equal or at least
/// one is the identity.
pub fn qubitwise_commutes(p: &PauliKey, q: &PauliKey) -> bool {
    let np = p.z.or_with(&p.x);
    let nq = q.z.or_with(&q.x);
    for i in 0..np.limbs().len() {
        let shared = np.limbs()[i] & nq.limbs()[i];
        if (p.z.limbs()[i] & shared) != (q.z.limbs()[i] & shared)
            || (p.x.limbs()[i] & shared) != (q.x.limbs()[i] & shared)
        {
            return false;
        }
    }
    true
}

/// Deduplicated sparse map from Pauli keys to real coefficients.
///
/// No zero coefficients are stored; purging is exact (`== 0.0`), truncation
/// being the only lossy step in the engine. Iteration follows address order.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliSum {
    n: usize,
    terms: BTreeMap<PauliKey, f64>,
}

impl PauliSum {
    pub fn new(n: usize) -> Self {
        PauliSum {
            n,
            terms: BTreeMap::new(),
        }
    }

    /// A sum holding a single term.
    pub fn from_term(term: PauliTerm) -> Self {
        let mut s = PauliSum::new(term.n);
        s.add(term.key, term.coeff);
        s
    }

    pub fn from_terms(n: usize, terms: impl IntoIterator<Item = (PauliKey, f64)>) -> Self {
        let mut s = PauliSum::new(n);
        for (k, c) in terms {
            s.add(k, c);
        }
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, key: &PauliKey) -> f64 {
        self.terms.get(key).copied().unwrap_or(0.0)
    }

    /// Adds `coeff` onto `key`, purging the entry if it cancels exactly.
    pub fn add(&mut self, key: PauliKey, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let entry = self.terms.entry(key);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coeff);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let new = *o.get() + coeff;
                if new == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = new;
                }
            }
        }
    }

    pub fn remove(&mut self, key: &PauliKey) -> Option<f64> {
        self.terms.remove(key)
    }

    /// Address-ordered iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&PauliKey, &f64)> {
        self.terms.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &PauliKey> {
        self.terms.keys()
    }

    pub fn l1_norm(&self) -> f64 {
        self.terms.values().map(|c| c.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.terms.values().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Keywise coefficient sum; exact-zero results purged.
    pub fn merge(&mut self, other: &PauliSum) -> Result<(), Error> {
        if self.n != other.n {
            return Err(Error::QubitCountMismatch {
                left: self.n,
                right: other.n,
            });
        }
        for (k, &c) in other.iter() {
            self.add(k.clone(), c);
        }
        Ok(())
    }

    /// Union of the supports of all terms.
    pub fn support(&self) -> Vec<usize> {
        let mut z = Bits::zeros(self.n);
        let mut x = Bits::zeros(self.n);
        for k in self.terms.keys() {
            z = z.or_with(&k.z);
            x = x.or_with(&k.x);
        }
        let any = z.or_with(&x);
        (0..self.n).filter(|&q| any.get(q)).collect()
    }

    /// Maximum absolute coefficient difference against `other`, over the
    /// union of keys.
    pub fn max_coeff_distance(&self, other: &PauliSum) -> f64 {
        let mut d: f64 = 0.0;
        for (k, &c) in self.iter() {
            d = d.max((c - other.coeff(k)).abs());
        }
        for (k, &c) in other.iter() {
            d = d.max((c - self.coeff(k)).abs());
        }
        d
    }
}

/// One entry of the JSON observable interchange format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservableEntry {
    pub pauli: String,
    pub coeff: f64,
}

/// Serializes a sum as a JSON list sorted by address.
pub fn to_observable_entries(sum: &PauliSum) -> Vec<ObservableEntry> {
    sum.iter()
        .map(|(k, &c)| ObservableEntry {
            pauli: k.to_string_n(sum.n()),
            coeff: c,
        })
        .collect()
}

/// Builds a sum from JSON entries; duplicate Pauli strings are summed.
pub fn from_observable_entries(entries: &[ObservableEntry]) -> Result<PauliSum, Error> {
    if entries.is_empty() {
        return Err(Error::EmptyPauli);
    }
    let (n, _) = PauliKey::parse(&entries[0].pauli)?;
    let mut sum = PauliSum::new(n);
    for e in entries {
        let (m, key) = PauliKey::parse(&e.pauli)?;
        if m != n {
            return Err(Error::QubitCountMismatch { left: n, right: m });
        }
        sum.add(key, e.coeff);
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(s: &str) -> PauliKey {
        PauliKey::parse(s).unwrap().1
    }

    #[test]
    fn address_of_single_qubit_codes() {
        // (z,x) codes: I -> 0, X -> 1, Z -> 2, Y -> 0b11 = 3
        let cases = [("I", 0u8), ("X", 1), ("Z", 2), ("Y", 3)];
        for (s, a) in cases {
            let k = key(s);
            assert_eq!(encode_address(1, &k).bits, BigUint::from(a), "{s}");
        }
    }

    #[test]
    fn address_roundtrip_exhaustive_n4() {
        let letters = ['I', 'X', 'Y', 'Z'];
        let mut seen = std::collections::BTreeSet::new();
        for a in letters {
            for b in letters {
                for c in letters {
                    for d in letters {
                        let s: String = [a, b, c, d].iter().collect();
                        let k = key(&s);
                        let addr = encode_address(4, &k);
                        assert!(addr.bits < PauliAddress::space_end(4).bits);
                        assert_eq!(decode_address(4, &addr), k, "{s}");
                        seen.insert(addr.bits.clone());
                    }
                }
            }
        }
        assert_eq!(seen.len(), 256, "addresses must be bijective over 4^4");
    }

    #[test]
    fn multiply_x_times_z_gives_minus_i_y() {
        let (k, phase) = multiply(&key("X"), &key("Z"));
        assert_eq!(k, key("Y"));
        assert_eq!(phase, Phase::MinusI);
    }

    #[test]
    fn multiply_identity_is_neutral() {
        for s in ["I", "X", "Y", "Z"] {
            let (k, phase) = multiply(&key("I"), &key(s));
            assert_eq!(k, key(s));
            assert_eq!(phase, Phase::One);
        }
    }

    #[test]
    fn multiply_self_gives_identity() {
        for s in ["XY", "ZZ", "YI", "IX"] {
            let (k, phase) = multiply(&key(s), &key(s));
            assert!(k.is_identity());
            assert_eq!(phase, Phase::One);
        }
    }

    #[test]
    fn commutes_basic() {
        assert!(commutes(&key("X"), &key("X")));
        assert!(!commutes(&key("X"), &key("Z")));
        // X1 Z2 vs Z1 X2 commute globally
        assert!(commutes(&key("XZ"), &key("ZX")));
    }

    #[test]
    fn qubitwise_commutes_basic() {
        assert!(qubitwise_commutes(&key("ZZ"), &key("ZI")));
        assert!(!qubitwise_commutes(&key("X"), &key("Z")));
        // globally commuting but not qubit-wise
        assert!(!qubitwise_commutes(&key("XZ"), &key("ZX")));
        assert!(commutes(&key("XZ"), &key("ZX")));
    }

    #[test]
    fn norms() {
        let mut s = PauliSum::new(2);
        assert_eq!(s.l1_norm(), 0.0);
        assert_eq!(s.l2_norm(), 0.0);
        s.add(key("XI"), -0.3);
        assert_eq!(s.l1_norm(), 0.3);
        assert_eq!(s.l2_norm(), 0.3);
        s.add(key("ZI"), 0.6);
        s.add(key("ZZ"), 0.8);
        s.remove(&key("XI"));
        assert!((s.l1_norm() - 1.4).abs() < 1e-15);
        assert!((s.l2_norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn merge_cancellation_purges() {
        let mut a = PauliSum::new(1);
        a.add(key("X"), 0.5);
        let mut b = PauliSum::new(1);
        b.add(key("X"), -0.5);
        a.merge(&b).unwrap();
        assert!(a.is_empty());
    }

    #[test]
    fn merge_identity_and_mismatch() {
        let mut a = PauliSum::new(2);
        a.add(key("XZ"), 1.0);
        let before = a.clone();
        a.merge(&PauliSum::new(2)).unwrap();
        assert_eq!(a, before);
        assert!(a.merge(&PauliSum::new(3)).is_err());
    }

    #[test]
    fn pauli_string_roundtrip() {
        for s in ["ZXYI", "IIII", "YYXZ"] {
            let (n, k) = PauliKey::parse(s).unwrap();
            assert_eq!(k.to_string_n(n), s);
        }
        assert!(PauliKey::parse("ABC").is_err());
        assert!(PauliKey::parse("").is_err());
    }

    #[test]
    fn observable_json_roundtrip() {
        let mut s = PauliSum::new(3);
        s.add(key("ZIX"), 0.25);
        s.add(key("YYI"), -1.5);
        let entries = to_observable_entries(&s);
        let back = from_observable_entries(&entries).unwrap();
        assert_eq!(back, s);
    }
}

//! Circuit intermediate representation, XY-model Trotter synthesis,
//! lightcone pruning and two-qubit depth metrics.
//!
//! Circuits are ordered lists of slices; slice 1 is applied first. Gates are
//! Clifford primitives or Pauli-generator rotations
//! `exp(-i * angle/2 * G)`. Each slice produced by the synthesizer is a
//! single commuting layer.

use serde::{Deserialize, Serialize};

use crate::pauli::PauliKey;
use crate::Error;

/// Gate alphabet. Clifford kinds carry no angle or generator; a rotation
/// carries both, with a non-identity generator.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    H(usize),
    S(usize),
    Sdg(usize),
    X(usize),
    Y(usize),
    Z(usize),
    Cx { control: usize, target: usize },
    Rotation { angle: f64, generator: PauliKey },
}

impl Gate {
    /// Qubits the gate acts on, for lightcone and depth bookkeeping.
    pub fn qubits(&self, n: usize) -> Vec<usize> {
        match self {
            Gate::H(q) | Gate::S(q) | Gate::Sdg(q) | Gate::X(q) | Gate::Y(q) | Gate::Z(q) => {
                vec![*q]
            }
            Gate::Cx { control, target } => vec![*control, *target],
            Gate::Rotation { generator, .. } => generator.support(n),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), Error> {
        match self {
            Gate::H(q) | Gate::S(q) | Gate::Sdg(q) | Gate::X(q) | Gate::Y(q) | Gate::Z(q) => {
                if *q >= n {
                    return Err(Error::QubitOutOfRange { index: *q, n });
                }
            }
            Gate::Cx { control, target } => {
                if *control >= n {
                    return Err(Error::QubitOutOfRange { index: *control, n });
                }
                if *target >= n {
                    return Err(Error::QubitOutOfRange { index: *target, n });
                }
                if control == target {
                    return Err(Error::DuplicateQubit(*control));
                }
            }
            Gate::Rotation { generator, .. } => {
                if generator.is_identity() {
                    return Err(Error::IdentityGenerator);
                }
            }
        }
        Ok(())
    }
}

/// A contiguous chunk of gates; the unit between truncation passes.
/// No constraint is placed on slice depth or support.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Slice {
    pub gates: Vec<Gate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub n: usize,
    pub slices: Vec<Slice>,
}

impl Circuit {
    pub fn new(n: usize) -> Self {
        Circuit {
            n,
            slices: Vec::new(),
        }
    }

    pub fn gate_count(&self) -> usize {
        self.slices.iter().map(|s| s.gates.len()).sum()
    }

    pub fn validate(&self) -> Result<(), Error> {
        for slice in &self.slices {
            for gate in &slice.gates {
                gate.validate(self.n)?;
            }
        }
        Ok(())
    }

    /// Flattens to gate order of application.
    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.slices.iter().flat_map(|s| s.gates.iter())
    }
}

/// Longest chain of two-qubit gates under qubit-sharing dependency.
/// Single-qubit gates contribute 0.
pub fn two_qubit_depth(circuit: &Circuit) -> usize {
    let mut frontier = vec![0usize; circuit.n];
    for gate in circuit.gates() {
        let qs = gate.qubits(circuit.n);
        if qs.len() < 2 {
            continue;
        }
        let level = qs.iter().map(|&q| frontier[q]).max().unwrap_or(0) + 1;
        for q in qs {
            frontier[q] = level;
        }
    }
    frontier.into_iter().max().unwrap_or(0)
}

/// Number of native two-qubit gates. Every gate touching two or more qubits
/// counts once; in XY synthesis each XX or YY rotation is one native gate.
pub fn two_qubit_gate_count(circuit: &Circuit) -> usize {
    circuit
        .gates()
        .filter(|g| g.qubits(circuit.n).len() >= 2)
        .count()
}

/// Walks slices in reverse, dropping every gate whose qubit set is disjoint
/// from the growing support of the observable; kept gates expand the support.
/// Slice boundaries are preserved so budget schedules stay aligned.
pub fn lightcone_prune(circuit: &Circuit, support: &[usize]) -> Result<Circuit, Error> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut active = vec![false; circuit.n];
    for &q in support {
        if q >= circuit.n {
            return Err(Error::QubitOutOfRange {
                index: q,
                n: circuit.n,
            });
        }
        active[q] = true;
    }
    let mut kept: Vec<Slice> = Vec::with_capacity(circuit.slices.len());
    for slice in circuit.slices.iter().rev() {
        let mut gates = Vec::new();
        for gate in slice.gates.iter().rev() {
            let qs = gate.qubits(circuit.n);
            if qs.iter().any(|&q| active[q]) {
                for &q in &qs {
                    active[q] = true;
                }
                gates.push(gate.clone());
            }
        }
        gates.reverse();
        kept.push(Slice { gates });
    }
    kept.reverse();
    Ok(Circuit {
        n: circuit.n,
        slices: kept,
    })
}

/// Lattice families supported by the synthesizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeKind {
    ChainOpen,
    ChainClosed,
    HeavyHex,
}

/// A site graph with a proper edge coloring; edges of one color are
/// disjoint and their rotations commute, forming one circuit layer.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub colors: Vec<usize>,
    pub kind: LatticeKind,
}

#[derive(Serialize, Deserialize)]
struct LatticeFile {
    n: usize,
    edges: Vec<(usize, usize)>,
    colors: Vec<usize>,
}

impl Lattice {
    /// Open chain of `n` sites; edges alternate between two colors.
    pub fn chain_open(n: usize) -> Result<Self, Error> {
        if n < 2 {
            return Err(Error::Lattice("chain needs at least 2 sites".into()));
        }
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let colors = (0..edges.len()).map(|i| i % 2).collect();
        Ok(Lattice {
            n,
            edges,
            colors,
            kind: LatticeKind::ChainOpen,
        })
    }

    /// Closed chain (ring). Requires even `n`: an odd cycle has no proper
    /// 2-coloring.
    pub fn chain_closed(n: usize) -> Result<Self, Error> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::Lattice(
                "closed chain needs an even site count >= 4".into(),
            ));
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let colors = (0..edges.len()).map(|i| i % 2).collect();
        Ok(Lattice {
            n,
            edges,
            colors,
            kind: LatticeKind::ChainClosed,
        })
    }

    /// The 127-site heavy-hexagon lattice with a balanced proper
    /// 3-coloring (48 edges per color), shipped as a data file.
    pub fn heavy_hex_127() -> Self {
        static DATA: &str = include_str!("../data/heavyhex127.json");
        let file: LatticeFile = serde_json::from_str(DATA).expect("embedded lattice data");
        let lat = Lattice {
            n: file.n,
            edges: file.edges,
            colors: file.colors,
            kind: LatticeKind::HeavyHex,
        };
        debug_assert!(lat.check_coloring().is_ok());
        lat
    }

    pub fn color_count(&self) -> usize {
        self.colors.iter().max().map_or(0, |&c| c + 1)
    }

    /// Verifies the coloring is proper and matches the family constraints
    /// (chains use at most 2 colors, heavy-hex 3).
    pub fn check_coloring(&self) -> Result<(), Error> {
        if self.colors.len() != self.edges.len() {
            return Err(Error::Lattice("color list length mismatch".into()));
        }
        for (i, &(a, b)) in self.edges.iter().enumerate() {
            if a >= self.n || b >= self.n || a == b {
                return Err(Error::Lattice(format!("bad edge ({a}, {b})")));
            }
            for (j, &(c, d)) in self.edges.iter().enumerate().skip(i + 1) {
                if self.colors[i] == self.colors[j] && (a == c || a == d || b == c || b == d) {
                    return Err(Error::Lattice(format!(
                        "edges {i} and {j} share a site but have color {}",
                        self.colors[i]
                    )));
                }
            }
        }
        let limit = match self.kind {
            LatticeKind::ChainOpen | LatticeKind::ChainClosed => 2,
            LatticeKind::HeavyHex => 3,
        };
        if self.color_count() > limit {
            return Err(Error::Lattice(format!(
                "{:?} must use at most {limit} colors",
                self.kind
            )));
        }
        Ok(())
    }

    /// Edges of one color, in deterministic edge-list order.
    fn color_class(&self, color: usize) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .zip(&self.colors)
            .filter(|(_, &c)| c == color)
            .map(|(&e, _)| e)
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.n,
            "edges": self.edges,
            "colors": self.colors,
        })
    }

    pub fn from_json(value: &serde_json::Value, kind: LatticeKind) -> Result<Self, Error> {
        let file: LatticeFile = serde_json::from_value(value.clone())?;
        let lat = Lattice {
            n: file.n,
            edges: file.edges,
            colors: file.colors,
            kind,
        };
        lat.check_coloring()?;
        Ok(lat)
    }
}

/// Ordering of the per-step edge rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrotterOrdering {
    /// Color-by-color layers with the color order reversed on alternate
    /// steps; adjacent same-edge rotations across step boundaries merge into
    /// one rotation with doubled angle. Conserves the total polarization.
    Symmetric,
    /// Per step, all XX rotations over every edge, then all YY rotations.
    /// Breaks the polarization symmetry.
    XxThenYy,
}

fn xx_key(n: usize, i: usize, j: usize) -> PauliKey {
    let mut k = PauliKey::identity(n);
    k.x.set(i, true);
    k.x.set(j, true);
    k
}

fn yy_key(n: usize, i: usize, j: usize) -> PauliKey {
    let mut k = PauliKey::identity(n);
    k.z.set(i, true);
    k.x.set(i, true);
    k.z.set(j, true);
    k.x.set(j, true);
    k
}

/// One commuting layer: per edge, an XX rotation followed by a YY rotation,
/// both `exp(-i * j * tau * G)` so the gate angle is `2 * j * tau` (or twice
/// that for merged cross-step layers).
fn edge_layer(n: usize, edges: &[(usize, usize)], angle: f64) -> Slice {
    let mut gates = Vec::with_capacity(edges.len() * 2);
    for &(a, b) in edges {
        gates.push(Gate::Rotation {
            angle,
            generator: xx_key(n, a, b),
        });
        gates.push(Gate::Rotation {
            angle,
            generator: yy_key(n, a, b),
        });
    }
    Slice { gates }
}

fn field_layer(n: usize, angle: f64) -> Slice {
    Slice {
        gates: (0..n)
            .map(|q| Gate::Rotation {
                angle,
                generator: PauliKey::single_z(n, q),
            })
            .collect(),
    }
}

/// Synthesizes `k` Trotter steps of the XY model
/// `H = sum_edges J (XX + YY) + h sum_i Z_i` at step size `tau`.
///
/// Every slice of the output is a single commuting layer. With the
/// `Symmetric` ordering and `h == 0`, same-colored layers adjacent across a
/// step boundary combine into one layer at doubled angle, giving a two-qubit
/// depth of `2k + 2` on chains and `4k + 2` on the heavy-hex lattice.
pub fn synth_xy_trotter(
    lattice: &Lattice,
    j: f64,
    h: f64,
    tau: f64,
    k: usize,
    ordering: TrotterOrdering,
) -> Result<Circuit, Error> {
    if k == 0 {
        return Err(Error::ZeroSteps);
    }
    lattice.check_coloring()?;
    let n = lattice.n;
    let theta = 2.0 * j * tau;
    let mut circuit = Circuit::new(n);
    match ordering {
        TrotterOrdering::Symmetric => {
            let ncolors = lattice.color_count();
            let classes: Vec<_> = (0..ncolors).map(|c| lattice.color_class(c)).collect();
            // step color sequence, reversed on alternate steps
            let mut seq: Vec<usize> = Vec::with_capacity(k * ncolors);
            for step in 0..k {
                if step % 2 == 0 {
                    seq.extend(0..ncolors);
                } else {
                    seq.extend((0..ncolors).rev());
                }
            }
            if h == 0.0 {
                // merge adjacent same-color layers across step boundaries
                let mut i = 0;
                while i < seq.len() {
                    if i + 1 < seq.len() && seq[i] == seq[i + 1] {
                        circuit
                            .slices
                            .push(edge_layer(n, &classes[seq[i]], 2.0 * theta));
                        i += 2;
                    } else {
                        circuit.slices.push(edge_layer(n, &classes[seq[i]], theta));
                        i += 1;
                    }
                }
            } else {
                // the field layer sits between steps, so nothing merges
                for step in 0..k {
                    for &c in &seq[step * ncolors..(step + 1) * ncolors] {
                        circuit.slices.push(edge_layer(n, &classes[c], theta));
                    }
                    circuit.slices.push(field_layer(n, 2.0 * h * tau));
                }
            }
        }
        TrotterOrdering::XxThenYy => {
            for _ in 0..k {
                let xx = Slice {
                    gates: lattice
                        .edges
                        .iter()
                        .map(|&(a, b)| Gate::Rotation {
                            angle: theta,
                            generator: xx_key(n, a, b),
                        })
                        .collect(),
                };
                let yy = Slice {
                    gates: lattice
                        .edges
                        .iter()
                        .map(|&(a, b)| Gate::Rotation {
                            angle: theta,
                            generator: yy_key(n, a, b),
                        })
                        .collect(),
                };
                circuit.slices.push(xx);
                circuit.slices.push(yy);
                if h != 0.0 {
                    circuit.slices.push(field_layer(n, 2.0 * h * tau));
                }
            }
        }
    }
    Ok(circuit)
}

// ---------------------------------------------------------------------------
// JSON interchange
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GateRecord {
    kind: String,
    qubits: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    angle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<String>,
}

/// Serializes a circuit as `{"n": ..., "slices": [[gate, ...], ...]}`.
pub fn circuit_to_json(circuit: &Circuit) -> serde_json::Value {
    let slices: Vec<Vec<GateRecord>> = circuit
        .slices
        .iter()
        .map(|slice| {
            slice
                .gates
                .iter()
                .map(|g| match g {
                    Gate::H(q) => simple("H", *q),
                    Gate::S(q) => simple("S", *q),
                    Gate::Sdg(q) => simple("Sdg", *q),
                    Gate::X(q) => simple("X", *q),
                    Gate::Y(q) => simple("Y", *q),
                    Gate::Z(q) => simple("Z", *q),
                    Gate::Cx { control, target } => GateRecord {
                        kind: "CX".into(),
                        qubits: vec![*control, *target],
                        angle: None,
                        generator: None,
                    },
                    Gate::Rotation { angle, generator } => GateRecord {
                        kind: "PauliRotation".into(),
                        qubits: generator.support(circuit.n),
                        angle: Some(*angle),
                        generator: Some(generator.to_string_n(circuit.n)),
                    },
                })
                .collect()
        })
        .collect();
    serde_json::json!({ "n": circuit.n, "slices": slices })
}

fn simple(kind: &str, q: usize) -> GateRecord {
    GateRecord {
        kind: kind.into(),
        qubits: vec![q],
        angle: None,
        generator: None,
    }
}

pub fn circuit_from_json(value: &serde_json::Value) -> Result<Circuit, Error> {
    #[derive(Deserialize)]
    struct CircuitFile {
        n: usize,
        slices: Vec<Vec<GateRecord>>,
    }
    let file: CircuitFile = serde_json::from_value(value.clone())?;
    let mut circuit = Circuit::new(file.n);
    for slice in file.slices {
        let mut gates = Vec::with_capacity(slice.len());
        for rec in slice {
            let gate = match rec.kind.as_str() {
                "H" => Gate::H(rec.qubits[0]),
                "S" => Gate::S(rec.qubits[0]),
                "Sdg" => Gate::Sdg(rec.qubits[0]),
                "X" => Gate::X(rec.qubits[0]),
                "Y" => Gate::Y(rec.qubits[0]),
                "Z" => Gate::Z(rec.qubits[0]),
                "CX" => Gate::Cx {
                    control: rec.qubits[0],
                    target: rec.qubits[1],
                },
                "PauliRotation" => {
                    let gen = rec.generator.ok_or(Error::IdentityGenerator)?;
                    let (m, key) = PauliKey::parse(&gen)?;
                    if m != file.n {
                        return Err(Error::QubitCountMismatch {
                            left: file.n,
                            right: m,
                        });
                    }
                    Gate::Rotation {
                        angle: rec.angle.unwrap_or(0.0),
                        generator: key,
                    }
                }
                other => {
                    return Err(Error::Lattice(format!("unknown gate kind {other:?}")));
                }
            };
            gate.validate(file.n)?;
            gates.push(gate);
        }
        circuit.slices.push(Slice { gates });
    }
    Ok(circuit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_depth_formula() {
        for k in 1..=25 {
            let lat = Lattice::chain_open(75).unwrap();
            let c = synth_xy_trotter(&lat, 1.0, 0.0, 0.05, k, TrotterOrdering::Symmetric).unwrap();
            assert_eq!(two_qubit_depth(&c), 2 * k + 2, "k={k}");
        }
    }

    #[test]
    fn heavy_hex_depth_formula() {
        for k in [1, 2, 5, 25] {
            let lat = Lattice::heavy_hex_127();
            let c = synth_xy_trotter(&lat, 1.0, 0.0, 0.05, k, TrotterOrdering::Symmetric).unwrap();
            assert_eq!(two_qubit_depth(&c), 4 * k + 2, "k={k}");
        }
    }

    #[test]
    fn paper_scale_gate_counts() {
        let chain = Lattice::chain_open(75).unwrap();
        let c = synth_xy_trotter(&chain, 1.0, 0.0, 0.05, 25, TrotterOrdering::Symmetric).unwrap();
        assert_eq!(two_qubit_gate_count(&c), 1924);
        assert_eq!(two_qubit_depth(&c), 52);

        let hex = Lattice::heavy_hex_127();
        let c = synth_xy_trotter(&hex, 1.0, 0.0, 0.05, 25, TrotterOrdering::Symmetric).unwrap();
        assert_eq!(two_qubit_gate_count(&c), 4896);
        assert_eq!(two_qubit_depth(&c), 102);
    }

    #[test]
    fn tiny_chain_single_step() {
        let lat = Lattice::chain_open(2).unwrap();
        let c = synth_xy_trotter(&lat, 1.0, 0.0, 0.1, 1, TrotterOrdering::Symmetric).unwrap();
        // one edge, one XX+YY rotation: two native gates
        assert_eq!(two_qubit_gate_count(&c), 2);
        assert_eq!(two_qubit_depth(&c), 2);
    }

    #[test]
    fn empty_circuit_depth_zero() {
        let c = Circuit::new(4);
        assert_eq!(two_qubit_depth(&c), 0);
        assert_eq!(two_qubit_gate_count(&c), 0);
    }

    #[test]
    fn odd_closed_chain_rejected() {
        assert!(Lattice::chain_closed(11).is_err());
        assert!(Lattice::chain_closed(12).is_ok());
    }

    #[test]
    fn heavy_hex_structure() {
        let lat = Lattice::heavy_hex_127();
        assert_eq!(lat.n, 127);
        assert_eq!(lat.edges.len(), 144);
        lat.check_coloring().unwrap();
        let sizes: Vec<usize> = (0..3)
            .map(|c| lat.colors.iter().filter(|&&x| x == c).count())
            .collect();
        assert_eq!(sizes, vec![48, 48, 48]);
    }

    #[test]
    fn zero_step_count_rejected() {
        let lat = Lattice::chain_open(4).unwrap();
        assert!(matches!(
            synth_xy_trotter(&lat, 1.0, 0.0, 0.1, 0, TrotterOrdering::Symmetric),
            Err(Error::ZeroSteps)
        ));
    }

    #[test]
    fn circuit_json_roundtrip() {
        let lat = Lattice::chain_open(4).unwrap();
        let c = synth_xy_trotter(&lat, 1.0, 0.5, 0.1, 2, TrotterOrdering::XxThenYy).unwrap();
        let json = circuit_to_json(&c);
        let back = circuit_from_json(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn lightcone_depth1_brickwork() {
        // single-qubit observable on a depth-1 layer: only the touching
        // two-qubit gate survives
        let lat = Lattice::chain_open(6).unwrap();
        let mut c = Circuit::new(6);
        c.slices
            .push(edge_layer(6, &lat.color_class(0), 0.2)); // edges (0,1),(2,3),(4,5)
        let pruned = lightcone_prune(&c, &[2]).unwrap();
        let kept: Vec<_> = pruned.gates().collect();
        assert_eq!(kept.len(), 2); // XX and YY on edge (2,3)
        for g in kept {
            assert_eq!(g.qubits(6), vec![2, 3]);
        }
    }
}

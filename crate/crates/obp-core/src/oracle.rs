//! Dense small-n reference implementations: statevector evolution, exact
//! expectation values, exact truncation errors, and the Trotter-localization
//! experiment. Everything here is the slow, obviously-correct path used to
//! validate the sparse engine.

use num_complex::Complex64;

use crate::circuit::{Circuit, Gate};
use crate::pauli::{PauliKey, PauliSum};
use crate::Error;

/// Dense statevector limit; beyond this the oracle refuses.
pub const MAX_STATE_QUBITS: usize = 14;
/// Spectral-norm (power iteration) limit.
pub const MAX_OPERATOR_QUBITS: usize = 12;

#[derive(Debug, Clone)]
pub struct DenseState {
    pub n: usize,
    pub amps: Vec<Complex64>,
}

impl DenseState {
    /// Computational-basis state |bits>; qubit q is bit q of `bits`.
    pub fn basis(n: usize, bits: u64) -> Result<Self, Error> {
        if n > MAX_STATE_QUBITS {
            return Err(Error::OracleTooLarge {
                n,
                limit: MAX_STATE_QUBITS,
            });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[bits as usize] = Complex64::new(1.0, 0.0);
        Ok(DenseState { n, amps })
    }

    pub fn zero(n: usize) -> Result<Self, Error> {
        Self::basis(n, 0)
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Canonical Hermitian Pauli applied to a dense vector:
/// `P |b> = (-i)^{|z&x|} (-1)^{z.(b^x)} |b ^ x>`.
fn apply_pauli(n: usize, key: &PauliKey, v: &[Complex64]) -> Vec<Complex64> {
    let dim = 1usize << n;
    let mut x_mask = 0usize;
    let mut z_mask = 0usize;
    let mut y_count = 0u32;
    for q in 0..n {
        if key.x.get(q) {
            x_mask |= 1 << q;
        }
        if key.z.get(q) {
            z_mask |= 1 << q;
        }
        if key.x.get(q) && key.z.get(q) {
            y_count += 1;
        }
    }
    let base = match y_count % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    };
    let mut out = vec![Complex64::new(0.0, 0.0); dim];
    for b in 0..dim {
        let target = b ^ x_mask;
        let sign = if ((b ^ x_mask) & z_mask).count_ones() % 2 == 1 {
            -1.0
        } else {
            1.0
        };
        out[target] = base * sign * v[b];
    }
    out
}

/// Applies a Pauli sum to a vector, term by term.
pub fn apply_sum(sum: &PauliSum, v: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
    for (key, &c) in sum.iter() {
        let pv = apply_pauli(sum.n(), key, v);
        for (o, p) in out.iter_mut().zip(pv) {
            *o += c * p;
        }
    }
    out
}

fn apply_gate(state: &mut DenseState, gate: &Gate) {
    let n = state.n;
    let dim = 1usize << n;
    match gate {
        Gate::H(q) => {
            let mask = 1usize << q;
            let s = std::f64::consts::FRAC_1_SQRT_2;
            for b in 0..dim {
                if b & mask == 0 {
                    let a0 = state.amps[b];
                    let a1 = state.amps[b | mask];
                    state.amps[b] = s * (a0 + a1);
                    state.amps[b | mask] = s * (a0 - a1);
                }
            }
        }
        Gate::S(q) => {
            let mask = 1usize << q;
            for b in 0..dim {
                if b & mask != 0 {
                    state.amps[b] *= Complex64::new(0.0, 1.0);
                }
            }
        }
        Gate::Sdg(q) => {
            let mask = 1usize << q;
            for b in 0..dim {
                if b & mask != 0 {
                    state.amps[b] *= Complex64::new(0.0, -1.0);
                }
            }
        }
        Gate::X(q) => {
            let mask = 1usize << q;
            for b in 0..dim {
                if b & mask == 0 {
                    state.amps.swap(b, b | mask);
                }
            }
        }
        Gate::Y(q) => {
            let mask = 1usize << q;
            for b in 0..dim {
                if b & mask == 0 {
                    let a0 = state.amps[b];
                    let a1 = state.amps[b | mask];
                    state.amps[b] = Complex64::new(0.0, -1.0) * a1;
                    state.amps[b | mask] = Complex64::new(0.0, 1.0) * a0;
                }
            }
        }
        Gate::Z(q) => {
            let mask = 1usize << q;
            for b in 0..dim {
                if b & mask != 0 {
                    state.amps[b] = -state.amps[b];
                }
            }
        }
        Gate::Cx { control, target } => {
            let cm = 1usize << control;
            let tm = 1usize << target;
            for b in 0..dim {
                if b & cm != 0 && b & tm == 0 {
                    state.amps.swap(b, b | tm);
                }
            }
        }
        Gate::Rotation { angle, generator } => {
            // exp(-i*angle/2*G) v = cos(angle/2) v - i sin(angle/2) G v
            let (c, s) = ((angle / 2.0).cos(), (angle / 2.0).sin());
            let gv = apply_pauli(n, generator, &state.amps);
            for (a, g) in state.amps.iter_mut().zip(gv) {
                *a = c * *a - Complex64::new(0.0, s) * g;
            }
        }
    }
}

/// Exact gate-by-gate application of a circuit.
pub fn apply_circuit(state: &DenseState, circuit: &Circuit) -> Result<DenseState, Error> {
    if state.n != circuit.n {
        return Err(Error::QubitCountMismatch {
            left: state.n,
            right: circuit.n,
        });
    }
    circuit.validate()?;
    let mut out = state.clone();
    for gate in circuit.gates() {
        apply_gate(&mut out, gate);
    }
    Ok(out)
}

/// `<psi| O |psi>` for a Hermitian Pauli sum; the imaginary part must vanish
/// to 1e-10 and is discarded after the check.
pub fn expectation(state: &DenseState, op: &PauliSum) -> Result<f64, Error> {
    if state.n != op.n() {
        return Err(Error::QubitCountMismatch {
            left: state.n,
            right: op.n(),
        });
    }
    let ov = apply_sum(op, &state.amps);
    let mut val = Complex64::new(0.0, 0.0);
    for (a, o) in state.amps.iter().zip(ov) {
        val += a.conj() * o;
    }
    assert!(
        val.im.abs() < 1e-10,
        "expectation of a Hermitian sum must be real, got {val}"
    );
    Ok(val.re)
}

/// Exact errors of a truncation remainder `delta`: the expectation-value
/// error on `state` and the spectral norm (largest singular value).
#[derive(Debug, Clone, Copy)]
pub struct TruncationError {
    pub expectation_error: f64,
    pub spectral_norm: f64,
}

pub fn exact_truncation_error(
    delta: &PauliSum,
    state: &DenseState,
) -> Result<TruncationError, Error> {
    if delta.n() > MAX_OPERATOR_QUBITS {
        return Err(Error::OracleTooLarge {
            n: delta.n(),
            limit: MAX_OPERATOR_QUBITS,
        });
    }
    if delta.is_empty() {
        return Ok(TruncationError {
            expectation_error: 0.0,
            spectral_norm: 0.0,
        });
    }
    let expectation_error = expectation(state, delta)?.abs();
    let spectral_norm = spectral_norm_power_iteration(delta, 1e-8, 10_000);
    Ok(TruncationError {
        expectation_error,
        spectral_norm,
    })
}

/// Power iteration on `delta^2` (Hermitian), avoiding a full
/// eigendecomposition. Deterministic seeded start vector.
fn spectral_norm_power_iteration(delta: &PauliSum, tol: f64, max_iters: usize) -> f64 {
    let dim = 1usize << delta.n();
    // simple multiplicative-congruential fill; any dense non-orthogonal
    // start works and this keeps runs reproducible
    let mut v: Vec<Complex64> = (0..dim)
        .map(|i| {
            let t = ((i as u64).wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407)
                >> 33) as f64
                / (1u64 << 31) as f64;
            Complex64::new(1.0 + t, 0.5 - t)
        })
        .collect();
    let norm = |v: &[Complex64]| v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|a| *a /= nv);
    let mut estimate = 0.0f64;
    for _ in 0..max_iters {
        let w = apply_sum(delta, &apply_sum(delta, &v));
        let lambda_sq = norm(&w);
        if lambda_sq == 0.0 {
            return 0.0;
        }
        let next = lambda_sq.sqrt();
        v = w.into_iter().map(|a| a / lambda_sq).collect();
        if (next - estimate).abs() <= tol * next.max(1.0) {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Polarization `M = (1/n) sum_i Z_i` of a dense state, computed from the
/// diagonal.
pub fn polarization(state: &DenseState) -> f64 {
    let n = state.n as f64;
    state
        .amps
        .iter()
        .enumerate()
        .map(|(b, a)| a.norm_sqr() * (state.n as f64 - 2.0 * (b.count_ones() as f64)) / n)
        .sum()
}

/// Long-time deviation of the polarization under the symmetry-breaking
/// Trotterization: the time-average of `|<M>_t - <M>_0|` over integer
/// Trotter steps `t/tau` in `[t1, t2]`.
///
/// The initial state is `|00...0>`, an eigenstate of `M` with `<M>_0 = 1`;
/// the field strength `mu` plays the role of the model's `h`.
pub fn localization_deviation(
    n: usize,
    tau: f64,
    mu: f64,
    j: f64,
    window: (f64, f64),
) -> Result<f64, Error> {
    use crate::circuit::{synth_xy_trotter, Lattice, TrotterOrdering};
    let (t1, t2) = window;
    let first = (t1 / tau).ceil() as usize;
    let last = (t2 / tau).floor() as usize;
    if last < first {
        return Err(Error::EmptyWindow);
    }
    let lattice = Lattice::chain_closed(n)?;
    let step = synth_xy_trotter(&lattice, j, mu, tau, 1, TrotterOrdering::XxThenYy)?;
    let mut state = DenseState::zero(n)?;
    let m0 = polarization(&state);
    let mut acc = 0.0;
    let mut samples = 0usize;
    for t in 1..=last {
        state = apply_circuit(&state, &step)?;
        if t >= first {
            acc += (polarization(&state) - m0).abs();
            samples += 1;
        }
    }
    Ok(acc / samples as f64)
}

//! Slice-by-slice Heisenberg conjugation of a Pauli sum with budgeted
//! truncation and triangle-inequality error accounting.
//!
//! Clifford gates map each Pauli key to exactly one key with a sign, so the
//! term count is preserved. A rotation `exp(-i*theta/2*G)` leaves commuting
//! terms unchanged and branches anticommuting ones:
//!
//!   P  ->  cos(theta) P + sin(theta) (i G P)
//!
//! where `i G P` resolves to a canonical Hermitian key with a real sign.
//! After each slice, terms are removed in order of increasing coefficient
//! magnitude until no further removal fits the per-slice budget; residual
//! budget carries to the next slice and per-slice errors sum into the
//! accrued bound.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, Gate, Slice};
use crate::pauli::{commutes, multiply, PauliKey, PauliSum};
use crate::Error;

/// Which norm of the removed coefficients a budget constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

/// Norm of a multiset of removed coefficients.
pub fn error_bound(removed: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => removed.iter().map(|c| c.abs()).sum(),
        Norm::L2 => removed.iter().map(|c| c * c).sum::<f64>().sqrt(),
    }
}

/// How the total budget is divided among slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetPolicy {
    /// Equal share per slice.
    Even,
    /// Fraction of the total reserved for a terminal truncation pass after
    /// all slices; the remainder is divided evenly.
    FinalHeavy { fraction: f64 },
    /// Explicit per-slice budgets; must sum to the total.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pub total: f64,
    pub policy: BudgetPolicy,
    pub norm: Norm,
    pub carry_forward: bool,
}

impl BudgetSchedule {
    pub fn zero(norm: Norm) -> Self {
        BudgetSchedule {
            total: 0.0,
            policy: BudgetPolicy::Even,
            norm,
            carry_forward: true,
        }
    }

    pub fn even(total: f64, norm: Norm) -> Self {
        BudgetSchedule {
            total,
            policy: BudgetPolicy::Even,
            norm,
            carry_forward: true,
        }
    }

    pub fn final_heavy(total: f64, fraction: f64, norm: Norm) -> Self {
        BudgetSchedule {
            total,
            policy: BudgetPolicy::FinalHeavy { fraction },
            norm,
            carry_forward: true,
        }
    }

    /// Per-slice budgets plus the terminal-pass budget for `slices` slices.
    pub fn resolve(&self, slices: usize) -> Result<(Vec<f64>, f64), Error> {
        if !self.total.is_finite() || self.total < 0.0 {
            return Err(Error::InvalidBudget(format!(
                "total must be finite and >= 0, got {}",
                self.total
            )));
        }
        match &self.policy {
            BudgetPolicy::Even => {
                let per = if slices == 0 {
                    0.0
                } else {
                    self.total / slices as f64
                };
                Ok((vec![per; slices], 0.0))
            }
            BudgetPolicy::FinalHeavy { fraction } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(Error::InvalidBudget(format!(
                        "final-heavy fraction must lie in [0, 1], got {fraction}"
                    )));
                }
                let terminal = self.total * fraction;
                let per = if slices == 0 {
                    0.0
                } else {
                    (self.total - terminal) / slices as f64
                };
                Ok((vec![per; slices], terminal))
            }
            BudgetPolicy::Explicit(per_slice) => {
                if per_slice.len() != slices {
                    return Err(Error::InvalidBudget(format!(
                        "explicit budget has {} entries for {} slices",
                        per_slice.len(),
                        slices
                    )));
                }
                if per_slice.iter().any(|&b| b < 0.0 || !b.is_finite()) {
                    return Err(Error::InvalidBudget("negative per-slice budget".into()));
                }
                let sum: f64 = per_slice.iter().sum();
                if (sum - self.total).abs() > 1e-9 * self.total.max(1.0) {
                    return Err(Error::InvalidBudget(format!(
                        "per-slice budgets sum to {sum}, expected {}",
                        self.total
                    )));
                }
                Ok((per_slice.clone(), 0.0))
            }
        }
    }
}

/// Early-termination limits; checks are cheap and coarse: the term limit is
/// tested after each truncation pass, the time limit at slice boundaries.
#[derive(Debug, Clone, Default)]
pub struct EngineLimits {
    pub max_terms: Option<usize>,
    pub max_seconds: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    TermLimit,
    TimeLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceStats {
    pub terms_before: usize,
    pub terms_after: usize,
    pub truncated_weight: f64,
}

#[derive(Debug, Clone)]
pub struct BackpropResult {
    pub operator: PauliSum,
    /// Upper bound on the total truncation error, the sum of per-slice
    /// removed weights.
    pub accrued_error: f64,
    pub per_slice_stats: Vec<SliceStats>,
    pub termination: Termination,
}

/// Applies one Clifford gate to a key, returning the new key and sign under
/// Heisenberg conjugation `g† P g`.
fn clifford_conjugate_key(gate: &Gate, key: &PauliKey) -> (PauliKey, f64) {
    let mut k = key.clone();
    let mut sign = 1.0;
    match gate {
        Gate::H(q) => {
            // X <-> Z, Y -> -Y
            let z = k.z.get(*q);
            let x = k.x.get(*q);
            if z & x {
                sign = -sign;
            }
            k.z.set(*q, x);
            k.x.set(*q, z);
        }
        Gate::S(q) => {
            // X -> -Y, Y -> X, Z -> Z
            let z = k.z.get(*q);
            let x = k.x.get(*q);
            if x && !z {
                sign = -sign;
            }
            k.z.set(*q, z ^ x);
        }
        Gate::Sdg(q) => {
            // X -> Y, Y -> -X, Z -> Z
            let z = k.z.get(*q);
            let x = k.x.get(*q);
            if x && z {
                sign = -sign;
            }
            k.z.set(*q, z ^ x);
        }
        Gate::X(q) => {
            if k.z.get(*q) {
                sign = -sign;
            }
        }
        Gate::Y(q) => {
            if k.z.get(*q) ^ k.x.get(*q) {
                sign = -sign;
            }
        }
        Gate::Z(q) => {
            if k.x.get(*q) {
                sign = -sign;
            }
        }
        Gate::Cx { control, target } => {
            let xc = k.x.get(*control);
            let zc = k.z.get(*control);
            let xt = k.x.get(*target);
            let zt = k.z.get(*target);
            if xc && zt && !(xt ^ zc) {
                sign = -sign;
            }
            k.x.set(*target, xt ^ xc);
            k.z.set(*control, zc ^ zt);
        }
        Gate::Rotation { .. } => unreachable!("rotation handled separately"),
    }
    (k, sign)
}

/// Conjugates a sum by one gate: `g† S g`. Clifford kinds preserve the term
/// count; a rotation at most doubles it. Duplicate keys are summed and exact
/// zeros purged. Terms are processed in address order so results are
/// bit-identical across runs.
pub fn conjugate_gate(sum: &PauliSum, gate: &Gate) -> Result<PauliSum, Error> {
    gate.validate(sum.n())?;
    if let Some(&q) = gate.qubits(sum.n()).iter().max() {
        if q >= sum.n() {
            return Err(Error::QubitOutOfRange {
                index: q,
                n: sum.n(),
            });
        }
    }
    let mut out = PauliSum::new(sum.n());
    match gate {
        Gate::Rotation { angle, generator } => {
            if *angle == 0.0 {
                return Ok(sum.clone());
            }
            let (cos, sin) = (angle.cos(), angle.sin());
            for (key, &coeff) in sum.iter() {
                if commutes(key, generator) {
                    out.add(key.clone(), coeff);
                } else {
                    out.add(key.clone(), cos * coeff);
                    let (branch, phase) = multiply(generator, key);
                    // i * G * P must be Hermitian when {G, P} = 0
                    let sign = phase
                        .times_i()
                        .real_sign()
                        .expect("anticommuting branch phase must be real");
                    out.add(branch, sin * sign * coeff);
                }
            }
        }
        _ => {
            for (key, &coeff) in sum.iter() {
                let (k, sign) = clifford_conjugate_key(gate, key);
                out.add(k, sign * coeff);
            }
        }
    }
    Ok(out)
}

/// Conjugates a sum through every gate of a slice, in reverse gate order
/// (the slice's last-applied gate is conjugated first).
pub fn conjugate_slice(sum: &PauliSum, slice: &Slice) -> Result<PauliSum, Error> {
    let mut cur = sum.clone();
    for gate in slice.gates.iter().rev() {
        cur = conjugate_gate(&cur, gate)?;
    }
    Ok(cur)
}

/// Removes terms in order of increasing |coefficient| (ties by ascending
/// address) while the removed set's norm stays within `budget`.
///
/// Returns the surviving sum, the removed weight in the requested norm, and
/// the residual budget. `O(n log n)`.
pub fn truncate(sum: &PauliSum, budget: f64, norm: Norm) -> Result<(PauliSum, f64, f64), Error> {
    if budget < 0.0 || !budget.is_finite() {
        return Err(Error::NegativeBudget(budget));
    }
    if budget == 0.0 || sum.is_empty() {
        return Ok((sum.clone(), 0.0, budget));
    }
    // BTreeMap iterates in address order, so the sort is stable over ties.
    let mut items: Vec<(&PauliKey, f64)> = sum.iter().map(|(k, &c)| (k, c)).collect();
    items.sort_by(|a, b| {
        a.1.abs()
            .partial_cmp(&b.1.abs())
            .expect("coefficients are finite")
            .then_with(|| a.0.cmp(b.0))
    });
    let mut removed = 0usize;
    let mut acc = 0.0; // L1: sum of |c|; L2: sum of c^2
    let cap = match norm {
        Norm::L1 => budget,
        Norm::L2 => budget * budget,
    };
    for (_, c) in &items {
        let next = acc
            + match norm {
                Norm::L1 => c.abs(),
                Norm::L2 => c * c,
            };
        if next <= cap {
            acc = next;
            removed += 1;
        } else {
            break;
        }
    }
    let kept = PauliSum::from_terms(
        sum.n(),
        items[removed..].iter().map(|(k, c)| ((*k).clone(), *c)),
    );
    let weight = match norm {
        Norm::L1 => acc,
        Norm::L2 => acc.sqrt(),
    };
    Ok((kept, weight, budget - weight))
}

/// Backpropagates `observable` through `circuit` slice by slice in reverse,
/// truncating after each slice against the schedule and accumulating the
/// removed weight into the accrued error bound.
pub fn backpropagate(
    observable: &PauliSum,
    circuit: &Circuit,
    budget: &BudgetSchedule,
    limits: &EngineLimits,
) -> Result<BackpropResult, Error> {
    if observable.n() != circuit.n {
        return Err(Error::QubitCountMismatch {
            left: observable.n(),
            right: circuit.n,
        });
    }
    let slices = circuit.slices.len();
    let (per_slice, terminal) = budget.resolve(slices)?;
    let start = Instant::now();

    let mut operator = observable.clone();
    let mut accrued = 0.0;
    let mut carried = 0.0;
    let mut stats = Vec::with_capacity(slices);
    let mut termination = Termination::Completed;

    // slices applied S..1; per-slice budgets follow processing order
    for (i, slice) in circuit.slices.iter().enumerate().rev() {
        if let Some(max_s) = limits.max_seconds {
            if start.elapsed().as_secs_f64() > max_s {
                termination = Termination::TimeLimit;
                break;
            }
        }
        let before = operator.len();
        operator = conjugate_slice(&operator, slice)?;
        let slice_budget = per_slice[slices - 1 - i] + carried;
        let (kept, weight, residual) = truncate(&operator, slice_budget, budget.norm)?;
        operator = kept;
        carried = if budget.carry_forward { residual } else { 0.0 };
        accrued += weight;
        stats.push(SliceStats {
            terms_before: before,
            terms_after: operator.len(),
            truncated_weight: weight,
        });
        if let Some(max_t) = limits.max_terms {
            if operator.len() > max_t {
                termination = Termination::TermLimit;
                break;
            }
        }
    }

    if termination == Termination::Completed && terminal > 0.0 {
        let (kept, weight, _) = truncate(&operator, terminal + carried, budget.norm)?;
        operator = kept;
        accrued += weight;
    }

    Ok(BackpropResult {
        operator,
        accrued_error: accrued,
        per_slice_stats: stats,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{synth_xy_trotter, Lattice, TrotterOrdering};
    use crate::pauli::PauliTerm;

    fn key(s: &str) -> PauliKey {
        PauliKey::parse(s).unwrap().1
    }

    fn single(s: &str, c: f64) -> PauliSum {
        PauliSum::from_term(PauliTerm::parse(s, c).unwrap())
    }

    #[test]
    fn cx_propagates_x_to_xx() {
        // CX(1 -> 2) on X1 gives X1 X2, coefficient unchanged
        let sum = single("IXI", 1.0);
        let out = conjugate_gate(
            &sum,
            &Gate::Cx {
                control: 1,
                target: 2,
            },
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.coeff(&key("IXX")), 1.0);
    }

    #[test]
    fn t_like_rotation_branches_x() {
        // rotation about Z1 at pi/4 maps X1 to terms on X1 and Y1
        let sum = single("IX", 1.0);
        let gate = Gate::Rotation {
            angle: std::f64::consts::FRAC_PI_4,
            generator: key("IZ"),
        };
        let out = conjugate_gate(&sum, &gate).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.coeff(&key("IX")) != 0.0);
        assert!(out.coeff(&key("IY")) != 0.0);
        let l2 = out.l2_norm();
        assert!((l2 - 1.0).abs() < 1e-12, "rotation preserves the L2 norm");
    }

    #[test]
    fn zero_angle_rotation_is_identity() {
        let sum = single("XYZ", 0.7);
        let gate = Gate::Rotation {
            angle: 0.0,
            generator: key("ZII"),
        };
        assert_eq!(conjugate_gate(&sum, &gate).unwrap(), sum);
    }

    #[test]
    fn truncate_examples() {
        // zero budget removes nothing
        let mut s = PauliSum::new(2);
        s.add(key("XI"), 0.6);
        s.add(key("ZI"), 0.8);
        let (kept, w, r) = truncate(&s, 0.0, Norm::L2).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(w, 0.0);
        assert_eq!(r, 0.0);
        // {0.6, 0.8} under L2 budget 1.0: both removed, residual 0
        let (kept, w, r) = truncate(&s, 1.0, Norm::L2).unwrap();
        assert!(kept.is_empty());
        assert!((w - 1.0).abs() < 1e-12);
        assert!(r.abs() < 1e-12);
        // budget beyond the norm empties the sum with the leftover returned
        let (kept, w, r) = truncate(&s, 2.0, Norm::L1).unwrap();
        assert!(kept.is_empty());
        assert!((w - 1.4).abs() < 1e-12);
        assert!((r - 0.6).abs() < 1e-12);
        assert!(truncate(&s, -0.1, Norm::L1).is_err());
    }

    #[test]
    fn error_bound_examples() {
        assert_eq!(error_bound(&[], Norm::L1), 0.0);
        assert_eq!(error_bound(&[], Norm::L2), 0.0);
        let c = [0.1, 0.1, 0.1];
        assert!((error_bound(&c, Norm::L1) - 0.3).abs() < 1e-15);
        assert!((error_bound(&c, Norm::L2) - 0.1 * 3f64.sqrt()).abs() < 1e-15);
        assert!(error_bound(&c, Norm::L2) <= error_bound(&c, Norm::L1));
    }

    #[test]
    fn identity_circuit_returns_observable() {
        let lat = Lattice::chain_open(4).unwrap();
        let circuit = synth_xy_trotter(&lat, 0.0, 0.0, 0.1, 1, TrotterOrdering::Symmetric).unwrap();
        let obs = single("ZIII", 1.0);
        let res = backpropagate(
            &obs,
            &circuit,
            &BudgetSchedule::zero(Norm::L1),
            &EngineLimits::default(),
        )
        .unwrap();
        assert_eq!(res.operator, obs);
        assert_eq!(res.accrued_error, 0.0);
        assert_eq!(res.termination, Termination::Completed);
    }

    #[test]
    fn fig2_style_count_is_deterministic() {
        // 12-qubit closed chain, 5 steps, tau = 0.1, observable Z_1,
        // zero budget; the per-ordering counts are frozen engine facts.
        let lat = Lattice::chain_closed(12).unwrap();
        let obs = single("IZIIIIIIIIII", 1.0);
        let mut counts = Vec::new();
        for ordering in [TrotterOrdering::Symmetric, TrotterOrdering::XxThenYy] {
            let circuit = synth_xy_trotter(&lat, 1.0, 0.0, 0.1, 5, ordering).unwrap();
            let res = backpropagate(
                &obs,
                &circuit,
                &BudgetSchedule::zero(Norm::L2),
                &EngineLimits::default(),
            )
            .unwrap();
            counts.push(res.operator.len());
        }
        assert_eq!(counts, vec![144, 272]);
    }

    #[test]
    fn term_limit_trips() {
        let lat = Lattice::chain_closed(12).unwrap();
        let circuit = synth_xy_trotter(&lat, 1.0, 0.0, 0.1, 5, TrotterOrdering::Symmetric).unwrap();
        let obs = single("IZIIIIIIIIII", 1.0);
        let res = backpropagate(
            &obs,
            &circuit,
            &BudgetSchedule::zero(Norm::L2),
            &EngineLimits {
                max_terms: Some(50),
                max_seconds: None,
            },
        )
        .unwrap();
        assert_eq!(res.termination, Termination::TermLimit);
        assert!(res.per_slice_stats.len() < circuit.slices.len());
    }

    #[test]
    fn slice_order_equivalence_zero_budget() {
        // backpropagating two slices equals backpropagating their
        // concatenation as one slice when no truncation happens
        let lat = Lattice::chain_open(6).unwrap();
        let circuit = synth_xy_trotter(&lat, 1.0, 0.0, 0.2, 2, TrotterOrdering::Symmetric).unwrap();
        let obs = single("IIZIII", 1.0);
        let sliced = backpropagate(
            &obs,
            &circuit,
            &BudgetSchedule::zero(Norm::L1),
            &EngineLimits::default(),
        )
        .unwrap();
        let mut merged = crate::circuit::Circuit::new(6);
        let mut all = Slice::default();
        for s in &circuit.slices {
            all.gates.extend(s.gates.iter().cloned());
        }
        merged.slices.push(all);
        let whole = backpropagate(
            &obs,
            &merged,
            &BudgetSchedule::zero(Norm::L1),
            &EngineLimits::default(),
        )
        .unwrap();
        assert_eq!(sliced.operator, whole.operator);
    }

    #[test]
    fn accrued_error_within_budget() {
        let lat = Lattice::chain_open(10).unwrap();
        let circuit = synth_xy_trotter(&lat, 1.0, 0.0, 0.3, 4, TrotterOrdering::Symmetric).unwrap();
        let obs = single("IIIIIZIIII", 1.0);
        for norm in [Norm::L1, Norm::L2] {
            let budget = BudgetSchedule::even(0.05, norm);
            let res = backpropagate(&obs, &circuit, &budget, &EngineLimits::default()).unwrap();
            assert!(res.accrued_error <= budget.total + 1e-12);
        }
    }

    #[test]
    fn budget_schedule_validation() {
        let b = BudgetSchedule {
            total: 1.0,
            policy: BudgetPolicy::Explicit(vec![0.5, 0.6]),
            norm: Norm::L1,
            carry_forward: true,
        };
        assert!(b.resolve(2).is_err()); // sums to 1.1
        let b = BudgetSchedule::final_heavy(1.0, 0.9, Norm::L2);
        let (per, terminal) = b.resolve(4).unwrap();
        assert_eq!(per.len(), 4);
        assert!((terminal - 0.9).abs() < 1e-15);
        assert!((per.iter().sum::<f64>() + terminal - 1.0).abs() < 1e-12);
    }
}

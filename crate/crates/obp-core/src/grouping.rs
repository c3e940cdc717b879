//! Qubit-wise-commuting measurement groups.
//!
//! Finding the minimum number of groups is NP-hard, so this is the greedy
//! first-fit heuristic: each key joins the first group it is qubit-wise
//! compatible with, else opens a new one. The caller supplies the key order
//! (canonically descending |coefficient|, ties by ascending address).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::pauli::{qubitwise_commutes, PauliKey, PauliSum};
use crate::Error;

/// A set of mutually qubit-wise-commuting Paulis plus the minimal joint
/// measurement basis (per qubit, the unique non-identity factor if any
/// member has one).
#[derive(Debug, Clone)]
pub struct MeasurementGroup {
    pub keys: Vec<PauliKey>,
    pub basis: PauliKey,
}

impl MeasurementGroup {
    pub fn basis_string(&self, n: usize) -> String {
        self.basis.to_string_n(n)
    }
}

/// Sorts keys by descending |coefficient|, ties by ascending address —
/// the canonical order fed to [`group_qwc`].
pub fn sort_keys_for_grouping(sum: &PauliSum) -> Vec<PauliKey> {
    let mut keys: Vec<(PauliKey, f64)> = sum.iter().map(|(k, &c)| (k.clone(), c)).collect();
    keys.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .expect("finite coefficients")
            .then_with(|| a.0.cmp(&b.0))
    });
    keys.into_iter().map(|(k, _)| k).collect()
}

/// Greedy first-fit grouping over the keys in the order given.
pub fn group_qwc(keys: &[PauliKey]) -> Result<Vec<MeasurementGroup>, Error> {
    if keys.is_empty() {
        return Err(Error::EmptyKeys);
    }
    let mut groups: Vec<MeasurementGroup> = Vec::new();
    for key in keys {
        let mut placed = false;
        for group in &mut groups {
            // compatibility with the joint basis is equivalent to pairwise
            // compatibility with every member
            if qubitwise_commutes(key, &group.basis) {
                group.basis = PauliKey {
                    z: group.basis.z.or_with(&key.z),
                    x: group.basis.x.or_with(&key.x),
                };
                group.keys.push(key.clone());
                placed = true;
                break;
            }
        }
        if !placed {
            groups.push(MeasurementGroup {
                keys: vec![key.clone()],
                basis: key.clone(),
            });
        }
    }
    Ok(groups)
}

/// Reconstructs `sum_P c_P * v_P` from per-key measured values.
pub fn reconstruct_expectation(
    groups: &[MeasurementGroup],
    per_key_values: &BTreeMap<PauliKey, f64>,
    coeffs: &BTreeMap<PauliKey, f64>,
) -> Result<f64, Error> {
    let mut total = 0.0;
    for group in groups {
        for key in &group.keys {
            let v = per_key_values
                .get(key)
                .ok_or_else(|| Error::MissingKey(format!("{key:?}")))?;
            let c = coeffs
                .get(key)
                .ok_or_else(|| Error::MissingKey(format!("{key:?}")))?;
            total += c * v;
        }
    }
    Ok(total)
}

/// JSON shape: `[{"basis": str, "paulis": [str, ...]}, ...]`.
#[derive(Debug, Serialize, Deserialize)]
pub struct GroupRecord {
    pub basis: String,
    pub paulis: Vec<String>,
}

pub fn groups_to_json(groups: &[MeasurementGroup], n: usize) -> Vec<GroupRecord> {
    groups
        .iter()
        .map(|g| GroupRecord {
            basis: g.basis_string(n),
            paulis: g.keys.iter().map(|k| k.to_string_n(n)).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(s: &str) -> PauliKey {
        PauliKey::parse(s).unwrap().1
    }

    #[test]
    fn all_z_forms_one_group() {
        let keys = vec![key("ZI"), key("IZ"), key("ZZ")];
        let groups = group_qwc(&keys).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].basis_string(2), "ZZ");
    }

    #[test]
    fn conflicting_bases_split() {
        let keys = vec![key("X"), key("Z")];
        let groups = group_qwc(&keys).unwrap();
        assert_eq!(groups.len(), 2);
    }

    #[test]
    fn globally_commuting_pair_still_splits() {
        // X1 Z2 and Z1 X2 commute but are not qubit-wise commuting
        let keys = vec![key("XZ"), key("ZX")];
        let groups = group_qwc(&keys).unwrap();
        assert_eq!(groups.len(), 2);
    }

    #[test]
    fn grouping_is_a_partition() {
        let keys = vec![key("XXI"), key("XIX"), key("ZZI"), key("IZZ"), key("YII")];
        let groups = group_qwc(&keys).unwrap();
        let total: usize = groups.iter().map(|g| g.keys.len()).sum();
        assert_eq!(total, keys.len());
        for g in &groups {
            for a in &g.keys {
                for b in &g.keys {
                    assert!(qubitwise_commutes(a, b));
                }
            }
        }
    }

    #[test]
    fn empty_input_rejected() {
        assert!(group_qwc(&[]).is_err());
    }

    #[test]
    fn reconstruction() {
        let keys = vec![key("Z")];
        let groups = group_qwc(&keys).unwrap();
        let mut values = BTreeMap::new();
        values.insert(key("Z"), 0.813);
        let mut coeffs = BTreeMap::new();
        coeffs.insert(key("Z"), 1.0);
        let r = reconstruct_expectation(&groups, &values, &coeffs).unwrap();
        assert!((r - 0.813).abs() < 1e-15);
        // missing value is an error
        let missing = BTreeMap::new();
        assert!(reconstruct_expectation(&groups, &missing, &coeffs).is_err());
    }
}

//! Wire encoding for term batches: length-prefixed records of
//! (address bytes big-endian, coefficient as 8-byte IEEE-754 big-endian).

use num_bigint::BigUint;

use crate::pauli::{decode_address, encode_address, PauliAddress, PauliKey};
use crate::Error;

/// Encodes one batch of terms. Record layout:
/// `u32 BE record length | address bytes BE | 8-byte coeff BE`.
pub fn encode_batch(n: usize, terms: &[(PauliKey, f64)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (key, coeff) in terms {
        let addr = encode_address(n, key).to_bytes_be(n);
        let len = (addr.len() + 8) as u32;
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(&addr);
        out.extend_from_slice(&coeff.to_be_bytes());
    }
    out
}

pub fn decode_batch(n: usize, bytes: &[u8]) -> Result<Vec<(PauliKey, f64)>, Error> {
    let mut terms = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        if pos + 4 > bytes.len() {
            return Err(Error::Cluster("truncated batch header".into()));
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if len < 8 || pos + len > bytes.len() {
            return Err(Error::Cluster("truncated batch record".into()));
        }
        let addr_bytes = &bytes[pos..pos + len - 8];
        let coeff = f64::from_be_bytes(bytes[pos + len - 8..pos + len].try_into().unwrap());
        let addr = PauliAddress {
            bits: BigUint::from_bytes_be(addr_bytes),
        };
        terms.push((decode_address(n, &addr), coeff));
        pos += len;
    }
    Ok(terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let keys = ["ZXYI", "IIII", "YYYY"];
        let terms: Vec<(PauliKey, f64)> = keys
            .iter()
            .enumerate()
            .map(|(i, s)| (PauliKey::parse(s).unwrap().1, 0.25 * (i as f64 + 1.0)))
            .collect();
        let bytes = encode_batch(4, &terms);
        let back = decode_batch(4, &bytes).unwrap();
        assert_eq!(back, terms);
    }

    #[test]
    fn corrupt_input_rejected() {
        assert!(decode_batch(4, &[1, 2, 3]).is_err());
    }
}

//! SHA-256 fingerprints of parameter blocks.

use sha2::{Digest, Sha256};

/// Hex digest over the shape and the little-endian bytes of every value.
pub fn tensor_checksum(shape: &[usize], tensors: &[&[f64]]) -> String {
    let mut h = Sha256::new();
    for &d in shape {
        h.update((d as u64).to_le_bytes());
    }
    for t in tensors {
        for v in t.iter() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_depends_on_values_and_shape() {
        let a = tensor_checksum(&[2], &[&[1.0, 2.0]]);
        assert_eq!(a.len(), 64);
        assert_eq!(a, tensor_checksum(&[2], &[&[1.0], &[2.0]]));
        assert_ne!(a, tensor_checksum(&[2], &[&[1.0, 2.5]]));
        assert_ne!(a, tensor_checksum(&[1, 2], &[&[1.0, 2.0]]));
    }
}

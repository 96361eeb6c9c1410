//! Flat binary weight container: the magic bytes `TICNN1`, then every weight
//! array in [`Network::params`] order as a little-endian `u32` length followed
//! by that many little-endian `f64` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::Network;

pub const MAGIC: &[u8; 6] = b"TICNN1";

pub fn encode_arrays(arrays: &[Vec<f64>]) -> Vec<u8> {
    let total: usize = arrays.iter().map(|a| 4 + 8 * a.len()).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + total);
    out.extend_from_slice(MAGIC);
    for a in arrays {
        out.extend_from_slice(&(a.len() as u32).to_le_bytes());
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_arrays(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| Error::Format("missing TICNN1 magic".into()))?;
    let mut arrays = Vec::new();
    let mut pos = 0;
    while pos < rest.len() {
        let len_bytes: [u8; 4] =
            rest.get(pos..pos + 4).and_then(|s| s.try_into().ok()).ok_or_else(|| Error::Format("truncated array length".into()))?;
        pos += 4;
        let n = u32::from_le_bytes(len_bytes) as usize;
        let body = rest.get(pos..pos + 8 * n).ok_or_else(|| Error::Format(format!("truncated array of {n} values")))?;
        pos += 8 * n;
        arrays.push(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect());
    }
    Ok(arrays)
}

pub fn save_weights(net: &Network) -> Vec<u8> {
    let arrays: Vec<Vec<f64>> = net.params().into_iter().map(|p| p.values).collect();
    encode_arrays(&arrays)
}

/// Loads weights into a network built from the same spec.
pub fn load_weights(net: &mut Network, bytes: &[u8]) -> Result<()> {
    net.set_params(&decode_arrays(bytes)?)
}

pub fn write_weights(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, save_weights(net))?;
    Ok(())
}

pub fn read_weights(net: &mut Network, path: &Path) -> Result<()> {
    load_weights(net, &std::fs::read(path)?)
}

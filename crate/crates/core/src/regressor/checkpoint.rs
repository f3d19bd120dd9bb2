//! Checkpoint serialization for [`Network`].
//!
//! Layout: magic `PFNC`, a u32 format version, the JSON-serialized
//! [`NetworkConfig`] (u32 length prefix), the f64 count scale, then one block
//! per parameter tensor — u32-length-prefixed name, u64 element count,
//! little-endian f64 values, and a FNV-1a 64 checksum of the value bytes.
//! Batch-norm running statistics are stored as additional named blocks.

use std::path::Path;

use crate::error::{Error, Result};

use super::{Network, NetworkConfig};

const MAGIC: &[u8; 4] = b"PFNC";
const VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn named_blocks(net: &Network) -> Vec<(String, Vec<f64>)> {
    let mut blocks: Vec<(String, Vec<f64>)> = net
        .param_blocks()
        .into_iter()
        .map(|(name, values)| (name, values.to_vec()))
        .collect();
    for (i, bn) in net.bn.iter().enumerate() {
        if let Some(bn) = bn {
            blocks.push((format!("bn{}.running_mean", i + 1), bn.running_mean.clone()));
            blocks.push((format!("bn{}.running_var", i + 1), bn.running_var.clone()));
        }
    }
    blocks
}

/// Serialize a network to bytes.
pub fn encode_model(net: &Network) -> Vec<u8> {
    let config_json = serde_json::to_vec(&net.config).expect("config serialization");
    let blocks = named_blocks(net);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);
    out.extend_from_slice(&net.count_scale.to_le_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, values) in blocks {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        let mut payload = Vec::with_capacity(values.len() * 8);
        for v in &values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(fnv1a(&payload)).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decode a network from checkpoint bytes.
pub fn decode_model(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            got: version,
        });
    }
    let config_len = r.u32()? as usize;
    let config: NetworkConfig = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("bad config: {e}")))?;
    let count_scale = r.f64()?;
    let n_blocks = r.u32()? as usize;

    let mut stored: Vec<(String, Vec<f64>)> = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("block name is not UTF-8".into()))?;
        let n_values = r.u64()? as usize;
        let checksum = r.u64()?;
        let payload = r.take(n_values * 8)?;
        if fnv1a(payload) != checksum {
            return Err(Error::CorruptCheckpoint(format!(
                "checksum mismatch in block '{name}'"
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        stored.push((name, values));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }

    let mut net = Network::new(config)?;
    net.count_scale = count_scale;
    let expected = named_blocks(&net);
    if stored.len() != expected.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "expected {} blocks, found {}",
            expected.len(),
            stored.len()
        )));
    }
    for ((name, values), (want_name, want_values)) in stored.iter().zip(expected.iter()) {
        if name != want_name || values.len() != want_values.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "block '{name}' ({} values) does not match expected '{want_name}' ({})",
                values.len(),
                want_values.len()
            )));
        }
    }

    // Fill trainable parameters, then running statistics.
    let n_param_blocks = net.param_blocks().len();
    let flat: Vec<f64> = stored[..n_param_blocks]
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .collect();
    net.set_params(&flat)?;
    let mut rest = stored[n_param_blocks..].iter();
    for bn in net.bn.iter_mut().flatten() {
        bn.running_mean = rest.next().unwrap().1.clone();
        bn.running_var = rest.next().unwrap().1.clone();
        if bn.running_var.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::CorruptCheckpoint(
                "non-finite or negative running variance".into(),
            ));
        }
    }
    Ok(net)
}

/// Write a checkpoint file.
pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(net))?;
    Ok(())
}

/// Read a checkpoint file.
pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    decode_model(&std::fs::read(path)?)
}

//! Binary checkpoint format for the published network variants.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic            4 bytes   "AESB"
//! version          u32       currently 1
//! variant          u8        1..=4 for B1..=B4
//! input_resolution u32
//! class_count      u32
//! score_offset     u8
//! bn_epsilon       f64       shared by the three gated blocks
//! bn_momentum      f64
//! learning_rate    f64
//! momentum         f64
//! seed             u64
//! epochs_trained   u32
//! rsrl_iteration   u32
//! block_count      u32
//! per block:
//!   name_len u32, name utf-8,
//!   value_count u64, values f32 * value_count
//! ```
//!
//! Parameter blocks appear in the order of [`Network::trainable_blocks`]
//! followed by [`Network::state_blocks`]. Tensor-shaped blocks are flattened
//! row-major, matching the in-memory tensor layout. Values are stored as
//! 32-bit floats, so save/load round-trips `Network<f32>` bit-exactly.

use crate::error::{Error, Result};
use crate::model::{build, ModelConfig, Network, NetworkShape, TrainingMeta, Variant, CLASS_COUNT, SCORE_OFFSET};
use crate::scalar::Scalar;
use std::collections::BTreeMap;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"AESB";
pub const VERSION: u32 = 1;

pub fn save_checkpoint(net: &Network<f32>, path: &Path) -> Result<()> {
    let bytes = checkpoint_to_vec(net)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_slice(&bytes)
}

pub fn checkpoint_to_vec(net: &Network<f32>) -> Result<Vec<u8>> {
    let variant = net
        .variant()
        .ok_or_else(|| Error::Format("only the published variants B1..B4 can be checkpointed".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(variant.code());
    out.extend_from_slice(&(net.shape().input_resolution as u32).to_le_bytes());
    out.extend_from_slice(&(net.shape().class_count as u32).to_le_bytes());
    out.push(SCORE_OFFSET);
    out.extend_from_slice(&net.cb1.bn.epsilon.widen().to_le_bytes());
    out.extend_from_slice(&net.cb1.bn.momentum.widen().to_le_bytes());
    out.extend_from_slice(&net.meta.learning_rate.to_le_bytes());
    out.extend_from_slice(&net.meta.momentum.to_le_bytes());
    out.extend_from_slice(&net.meta.seed.to_le_bytes());
    out.extend_from_slice(&net.meta.epochs_trained.to_le_bytes());
    out.extend_from_slice(&net.meta.rsrl_iteration.to_le_bytes());

    let blocks: Vec<(&str, &[f32])> = net.trainable_blocks().into_iter().chain(net.state_blocks()).collect();
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, values) in blocks {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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

pub fn checkpoint_from_slice(bytes: &[u8]) -> Result<Network<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic, expected \"AESB\"".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let variant = Variant::from_code(r.u8()?)?;
    let input_resolution = r.u32()? as usize;
    let class_count = r.u32()? as usize;
    let score_offset = r.u8()?;
    let bn_epsilon = r.f64()?;
    let bn_momentum = r.f64()?;
    let meta = TrainingMeta {
        learning_rate: r.f64()?,
        momentum: r.f64()?,
        seed: r.u64()?,
        epochs_trained: r.u32()?,
        rsrl_iteration: r.u32()?,
    };

    let shape = NetworkShape::for_variant(variant);
    if input_resolution != shape.input_resolution || class_count != CLASS_COUNT || score_offset != SCORE_OFFSET {
        return Err(Error::Format(format!(
            "checkpoint config (resolution {input_resolution}, classes {class_count}, offset {score_offset}) \
             is inconsistent with variant {variant}"
        )));
    }

    let block_count = r.u32()? as usize;
    let mut blocks: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    for _ in 0..block_count {
        let name_len = r.u32()? as usize;
        if name_len > 256 {
            return Err(Error::Format(format!("implausible block name length {name_len}")));
        }
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("block name is not utf-8".into()))?
            .to_string();
        let count = r.u64()? as usize;
        let raw = r.take(count * 4)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if blocks.insert(name.clone(), values).is_some() {
            return Err(Error::Format(format!("duplicate block {name:?}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }

    // Zero seed for the skeleton: every value is overwritten below.
    let mut net: Network<f32> = build(&ModelConfig::for_variant(variant), 0)?;
    net.meta = meta;
    for bn in [&mut net.cb1.bn, &mut net.cb2.bn, &mut net.cb3.bn] {
        bn.epsilon = bn_epsilon as f32;
        bn.momentum = bn_momentum as f32;
    }
    {
        let mut expected: Vec<(&'static str, &mut [f32])> =
            net.trainable_blocks_mut().into_iter().collect();
        // state blocks need a second borrow scope
        fill_blocks(&mut expected, &blocks)?;
    }
    {
        let mut state: Vec<(&'static str, &mut [f32])> = net.state_blocks_mut().into_iter().collect();
        fill_blocks(&mut state, &blocks)?;
    }
    let expected_names: Vec<&str> = net
        .trainable_blocks()
        .iter()
        .map(|(n, _)| *n)
        .chain(net.state_blocks().iter().map(|(n, _)| *n))
        .collect();
    for name in blocks.keys() {
        if !expected_names.contains(&name.as_str()) {
            return Err(Error::Format(format!("unexpected block {name:?} in checkpoint")));
        }
    }
    Ok(net)
}

fn fill_blocks(targets: &mut [(&'static str, &mut [f32])], blocks: &BTreeMap<String, Vec<f32>>) -> Result<()> {
    for (name, target) in targets.iter_mut() {
        let src = blocks
            .get(*name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing block {name:?}")))?;
        if src.len() != target.len() {
            return Err(Error::Format(format!(
                "block {name:?} has {} values, expected {}",
                src.len(),
                target.len()
            )));
        }
        target.copy_from_slice(src);
    }
    Ok(())
}

//! Portable weight archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic         4 bytes  "FDCW"
//! version       u32      currently 1
//! tensor_count  u32
//! per tensor:   u16 name length + UTF-8 name,
//!               u8 rank, u32 dims[rank],
//!               u8 dtype (1 = f32),
//!               u64 byte offset into the data section
//! data section: contiguous f32 values
//! ```
//!
//! The archive stores weights only; optimizer state always restarts at zero.
//! Loading requires the target topology, since the tensor table alone cannot
//! reconstruct pooling placement. A 3-channel first convolution (RGB
//! pretraining) is accepted for a 1-channel model by averaging the kernel
//! over its input channels.

use super::network::{Layer, NetworkModel, Tensor};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::collections::HashMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"FDCW";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

struct TableEntry {
    name: String,
    dims: Vec<u32>,
    offset: u64,
}

pub fn weights_to_bytes(model: &NetworkModel<f32>) -> Result<Vec<u8>> {
    let names = model.tensor_names();
    let mut table = Vec::with_capacity(names.len());
    let mut data: Vec<u8> = Vec::new();
    for (name, layer_idx, is_weight) in &names {
        let tensor = tensor_of(&model.layers[*layer_idx], *is_weight);
        let offset = data.len() as u64;
        for &v in &tensor.data {
            data.write_f32::<LittleEndian>(v)?;
        }
        table.push(TableEntry {
            name: name.clone(),
            dims: tensor.shape.iter().map(|&d| d as u32).collect(),
            offset,
        });
    }

    let mut out = Vec::with_capacity(data.len() + 64 * table.len());
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(table.len() as u32)?;
    for entry in &table {
        let name = entry.name.as_bytes();
        out.write_u16::<LittleEndian>(name.len() as u16)?;
        out.write_all(name)?;
        out.write_u8(entry.dims.len() as u8)?;
        for &d in &entry.dims {
            out.write_u32::<LittleEndian>(d)?;
        }
        out.write_u8(DTYPE_F32)?;
        out.write_u64::<LittleEndian>(entry.offset)?;
    }
    out.extend_from_slice(&data);
    Ok(out)
}

fn tensor_of<'m>(layer: &'m Layer<f32>, weight: bool) -> &'m Tensor<f32> {
    match layer {
        Layer::Conv {
            weight: w, bias: b, ..
        }
        | Layer::Dense {
            weight: w, bias: b, ..
        } => {
            if weight {
                w
            } else {
                b
            }
        }
        Layer::MaxPool { .. } => unreachable!("pool layers carry no tensors"),
    }
}

fn tensor_of_mut<'m>(layer: &'m mut Layer<f32>, weight: bool) -> &'m mut Tensor<f32> {
    match layer {
        Layer::Conv {
            weight: w, bias: b, ..
        }
        | Layer::Dense {
            weight: w, bias: b, ..
        } => {
            if weight {
                w
            } else {
                b
            }
        }
        Layer::MaxPool { .. } => unreachable!("pool layers carry no tensors"),
    }
}

fn truncated() -> Error {
    Error::Archive("weight archive truncated".into())
}

/// Parses an archive into `(name → (dims, values))`.
fn parse_archive(bytes: &[u8]) -> Result<HashMap<String, (Vec<u32>, Vec<f32>)>> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| truncated())?;
    if &magic != MAGIC {
        return Err(Error::Archive(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = cur.read_u32::<LittleEndian>().map_err(|_| truncated())?;
    if version != VERSION {
        return Err(Error::Archive(format!(
            "unsupported archive version {version}"
        )));
    }
    let count = cur.read_u32::<LittleEndian>().map_err(|_| truncated())? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.read_u16::<LittleEndian>().map_err(|_| truncated())? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name).map_err(|_| truncated())?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Archive("tensor name is not UTF-8".into()))?;
        let rank = cur.read_u8().map_err(|_| truncated())? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.read_u32::<LittleEndian>().map_err(|_| truncated())?);
        }
        let dtype = cur.read_u8().map_err(|_| truncated())?;
        if dtype != DTYPE_F32 {
            return Err(Error::Archive(format!(
                "tensor {name}: unsupported dtype tag {dtype}"
            )));
        }
        let offset = cur.read_u64::<LittleEndian>().map_err(|_| truncated())?;
        table.push((name, dims, offset));
    }

    let data_start = cur.position() as usize;
    let data = &bytes[data_start..];
    let mut tensors = HashMap::with_capacity(count);
    for (name, dims, offset) in table {
        let numel: usize = dims.iter().map(|&d| d as usize).product();
        let begin = offset as usize;
        let end = begin + numel * 4;
        if end > data.len() {
            return Err(truncated());
        }
        let mut values = Vec::with_capacity(numel);
        let mut vcur = Cursor::new(&data[begin..end]);
        for _ in 0..numel {
            values.push(vcur.read_f32::<LittleEndian>().map_err(|_| truncated())?);
        }
        if tensors.insert(name.clone(), (dims, values)).is_some() {
            return Err(Error::Archive(format!("duplicate tensor {name}")));
        }
    }
    Ok(tensors)
}

/// Restores weights into a freshly initialized model of the given topology.
pub fn weights_from_bytes(bytes: &[u8], spec: &NetworkSpec) -> Result<NetworkModel<f32>> {
    let mut tensors = parse_archive(bytes)?;
    let mut model = NetworkModel::<f32>::init(spec, 0)?;
    model.zero_weights();

    let names = model.tensor_names();
    let first_conv_weight = names
        .iter()
        .find(|(_, li, w)| *w && matches!(model.layers[*li], Layer::Conv { .. }))
        .map(|(name, _, _)| name.clone());

    for (name, layer_idx, is_weight) in &names {
        let (dims, mut values) = tensors
            .remove(name)
            .ok_or_else(|| Error::Archive(format!("missing tensor {name}")))?;
        let target = tensor_of_mut(&mut model.layers[*layer_idx], *is_weight);
        let expected: Vec<u32> = target.shape.iter().map(|&d| d as u32).collect();
        if dims != expected {
            // An RGB-pretrained first conv is reduced by channel mean.
            let reducible = Some(name) == first_conv_weight.as_ref()
                && expected.len() == 4
                && dims.len() == 4
                && dims[0] == expected[0]
                && dims[1] == 3
                && expected[1] == 1
                && dims[2..] == expected[2..];
            if !reducible {
                return Err(Error::Archive(format!(
                    "tensor {name}: dims {dims:?} do not match model dims {expected:?}"
                )));
            }
            let k2 = (dims[2] * dims[3]) as usize;
            let out_ch = dims[0] as usize;
            let mut reduced = vec![0.0f32; out_ch * k2];
            for oc in 0..out_ch {
                for j in 0..k2 {
                    let mut sum = 0.0f32;
                    for ic in 0..3 {
                        sum += values[oc * 3 * k2 + ic * k2 + j];
                    }
                    reduced[oc * k2 + j] = sum / 3.0;
                }
            }
            values = reduced;
        }
        target.data.copy_from_slice(&values);
    }

    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Archive(format!("unexpected tensor {extra}")));
    }
    model.reset_velocity();
    Ok(model)
}

pub fn save_weights(model: &NetworkModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, weights_to_bytes(model)?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>, spec: &NetworkSpec) -> Result<NetworkModel<f32>> {
    let bytes = std::fs::read(path)?;
    weights_from_bytes(&bytes, spec)
}

//! Bit-exact binary formats: model checkpoints and raw tensor dumps.
//!
//! Checkpoint layout: a text header (magic line, spec fields, one `param=`
//! line per named tensor in registry order, `end`), then the parameter data
//! as little-endian 64-bit floats in the same order. Diffable with any hex
//! tool and stable across runs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ArchKind, Model, ModelSpec};
use crate::tensor::Tensor;

const CKPT_MAGIC: &str = "DIVLAB-CKPT v1";
const TENSOR_MAGIC: &str = "DIVLAB-TENSOR v1";

fn join(vals: &[usize]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad integer list entry `{p}`")))
        })
        .collect()
}

/// Serialize a model to the checkpoint byte format.
pub fn encode_model(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let mut header = String::new();
    header.push_str(CKPT_MAGIC);
    header.push('\n');
    match &spec.arch {
        ArchKind::Mlp { hidden } => {
            header.push_str("arch=mlp\n");
            header.push_str(&format!("hidden={}\n", join(hidden)));
        }
        ArchKind::Cnn { channels, kernel } => {
            header.push_str("arch=cnn\n");
            header.push_str(&format!("channels={}\n", join(channels)));
            header.push_str(&format!("kernel={kernel}\n"));
        }
    }
    let (c, h, w) = spec.input;
    header.push_str(&format!("input={c},{h},{w}\n"));
    header.push_str(&format!("classes={}\n", spec.classes));
    header.push_str(&format!("seed={}\n", spec.seed));
    for (name, t) in model.params() {
        header.push_str(&format!("param={name}:{}\n", join(t.shape())));
    }
    header.push_str("end\n");

    let mut out = header.into_bytes();
    for (_, t) in model.params() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse checkpoint bytes back into a model (exact parameter values).
pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let (fields, params_decl, body) = split_header(bytes, CKPT_MAGIC)?;
    let get = |k: &str| -> Result<&str> {
        fields
            .iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing header field `{k}`")))
    };
    let arch = match get("arch")? {
        "mlp" => ArchKind::Mlp { hidden: parse_list(get("hidden")?)? },
        "cnn" => ArchKind::Cnn {
            channels: parse_list(get("channels")?)?,
            kernel: get("kernel")?
                .parse()
                .map_err(|_| Error::Checkpoint("bad kernel".into()))?,
        },
        other => return Err(Error::Checkpoint(format!("unknown arch `{other}`"))),
    };
    let input = parse_list(get("input")?)?;
    if input.len() != 3 {
        return Err(Error::Checkpoint("input must have 3 dims".into()));
    }
    let spec = ModelSpec {
        arch,
        input: (input[0], input[1], input[2]),
        classes: get("classes")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad classes".into()))?,
        seed: get("seed")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad seed".into()))?,
    };

    let mut model = Model::build(spec)?;
    if params_decl.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "spec declares {} parameters, file lists {}",
            model.params().len(),
            params_decl.len()
        )));
    }
    let mut offset = 0usize;
    let mut params = Vec::with_capacity(params_decl.len());
    for ((name, shape), (reg_name, reg_tensor)) in params_decl.iter().zip(model.params()) {
        if name != reg_name || shape.as_slice() != reg_tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` {shape:?} disagrees with spec registry `{reg_name}` {:?}",
                reg_tensor.shape()
            )));
        }
        let n: usize = shape.iter().product();
        let bytes_needed = n * 8;
        if offset + bytes_needed > body.len() {
            return Err(Error::Checkpoint("truncated parameter data".into()));
        }
        let data: Vec<f64> = body[offset..offset + bytes_needed]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += bytes_needed;
        params.push((name.clone(), Tensor::new(shape.clone(), data)?));
    }
    if offset != body.len() {
        return Err(Error::Checkpoint(format!(
            "trailing bytes: expected {offset}, file has {}",
            body.len()
        )));
    }
    model.set_params(params)?;
    Ok(model)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    decode_model(&fs::read(path)?)
}

/// Serialize one tensor (same header-then-floats layout as checkpoints).
pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = format!("{TENSOR_MAGIC}\nshape={}\nend\n", join(t.shape())).into_bytes();
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let (fields, _, body) = split_header(bytes, TENSOR_MAGIC)?;
    let shape = fields
        .iter()
        .find(|(k, _)| k == "shape")
        .map(|(_, v)| parse_list(v))
        .ok_or_else(|| Error::Checkpoint("missing shape".into()))??;
    let n: usize = shape.iter().product();
    if body.len() != n * 8 {
        return Err(Error::Checkpoint(format!(
            "tensor body has {} bytes, shape {shape:?} needs {}",
            body.len(),
            n * 8
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn save_tensor(t: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

type Header = (Vec<(String, String)>, Vec<(String, Vec<usize>)>, Vec<u8>);

fn split_header(bytes: &[u8], magic: &str) -> Result<Header> {
    let mut fields = Vec::new();
    let mut params = Vec::new();
    let mut pos = 0usize;
    let mut first = true;
    loop {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl])
            .map_err(|_| Error::Checkpoint("non-utf8 header".into()))?;
        pos += nl + 1;
        if first {
            if line != magic {
                return Err(Error::Checkpoint(format!(
                    "version mismatch: expected `{magic}`, found `{line}`"
                )));
            }
            first = false;
            continue;
        }
        if line == "end" {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed header line `{line}`")))?;
        if k == "param" {
            let (name, shape) = v
                .split_once(':')
                .ok_or_else(|| Error::Checkpoint(format!("malformed param line `{line}`")))?;
            params.push((name.to_string(), parse_list(shape)?));
        } else {
            fields.push((k.to_string(), v.to_string()));
        }
    }
    Ok((fields, params, bytes[pos..].to_vec()))
}

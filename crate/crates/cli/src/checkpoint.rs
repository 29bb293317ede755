//! Checkpoint persistence.
//!
//! Single-file binary layout, little-endian:
//!
//! ```text
//! magic "DBEACKP1" | format_version u32 | config_len u32 | config JSON |
//! tensor_count u32 | { name_len u16, name, rows u32, cols u32, f64 data } * |
//! sha256 digest of everything above
//! ```
//!
//! The loader verifies magic, version, and digest before touching tensors,
//! and rejects shape or configuration mismatches without partial loads.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use dbea_core::mlp::Mlp;
use dbea_core::model::{ModelConfig, TandemModel};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"DBEACKP1";
const FORMAT_VERSION: u32 = 1;

fn named_components(model: &TandemModel) -> Vec<(&'static str, &Mlp)> {
    let mut parts: Vec<(&'static str, &Mlp)> = vec![
        ("trunk", &model.trunk),
        ("alpha_stem", &model.alpha.stem),
        ("alpha_box", &model.alpha.box_tail),
        ("alpha_cls", &model.alpha.cls),
    ];
    if let Some(beta) = &model.beta {
        parts.push(("beta_stem", &beta.stem));
        parts.push(("beta_box", &beta.box_tail));
        parts.push(("beta_cls", &beta.cls));
    }
    parts
}

fn push_tensor(buf: &mut Vec<u8>, name: &str, rows: usize, cols: usize, data: &[f64]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a model checkpoint to bytes.
pub fn checkpoint_bytes(model: &TandemModel) -> Result<Vec<u8>> {
    let config_json = serde_json::to_vec(&model.config)
        .map_err(|e| CliError::Data(format!("serialize model config: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config_json);

    let components = named_components(model);
    let tensor_count: usize = components.iter().map(|(_, mlp)| mlp.layers.len() * 2).sum();
    buf.extend_from_slice(&(tensor_count as u32).to_le_bytes());
    for (name, mlp) in components {
        for (i, layer) in mlp.layers.iter().enumerate() {
            push_tensor(
                &mut buf,
                &format!("{name}.{i}.weight"),
                layer.weight.rows(),
                layer.weight.cols(),
                layer.weight.as_slice(),
            );
            push_tensor(&mut buf, &format!("{name}.{i}.bias"), 1, layer.bias.len(), &layer.bias);
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

pub fn save_checkpoint(model: &TandemModel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let bytes = checkpoint_bytes(model)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(CliError::Data("checkpoint truncated".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint, optionally enforcing an expected model configuration.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<TandemModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 4 + 4 + 32 {
        return Err(CliError::Data("checkpoint truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let computed = Sha256::digest(body);
    if digest != computed.as_slice() {
        return Err(CliError::Data("checkpoint digest mismatch".into()));
    }
    let mut r = Reader { buf: body, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(CliError::Data("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CliError::Data(format!(
            "unsupported checkpoint format version {version}"
        )));
    }
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| CliError::Data(format!("checkpoint config: {e}")))?;
    if let Some(want) = expected {
        if *want != config {
            return Err(CliError::Config(
                "checkpoint model configuration does not match the run configuration".into(),
            ));
        }
    }
    let mut model = TandemModel::new(&config, 0).map_err(CliError::from)?;
    let tensor_count = r.u32()? as usize;

    let mut expected_names = Vec::with_capacity(tensor_count);
    {
        let mut parts: Vec<(&str, usize)> = vec![
            ("trunk", model.trunk.layers.len()),
            ("alpha_stem", model.alpha.stem.layers.len()),
            ("alpha_box", model.alpha.box_tail.layers.len()),
            ("alpha_cls", model.alpha.cls.layers.len()),
        ];
        if let Some(beta) = &model.beta {
            parts.push(("beta_stem", beta.stem.layers.len()));
            parts.push(("beta_box", beta.box_tail.layers.len()));
            parts.push(("beta_cls", beta.cls.layers.len()));
        }
        for (name, layers) in parts {
            for i in 0..layers {
                expected_names.push(format!("{name}.{i}.weight"));
                expected_names.push(format!("{name}.{i}.bias"));
            }
        }
    }
    if tensor_count != expected_names.len() {
        return Err(CliError::Data(format!(
            "checkpoint tensor count {tensor_count} does not match configuration"
        )));
    }

    let mut tensors = Vec::with_capacity(tensor_count);
    for expected_name in &expected_names {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CliError::Data("checkpoint tensor name not utf-8".into()))?
            .to_string();
        if &name != expected_name {
            return Err(CliError::Data(format!(
                "unexpected tensor {name}, expected {expected_name}"
            )));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, rows, cols, data));
    }
    if r.at != body.len() {
        return Err(CliError::Data("trailing bytes in checkpoint".into()));
    }

    let mut idx = 0;
    let mut apply = |mlp: &mut Mlp| -> Result<()> {
        for layer in &mut mlp.layers {
            let (_, rows, cols, data) = &tensors[idx];
            if *rows != layer.weight.rows() || *cols != layer.weight.cols() {
                return Err(CliError::Data(format!(
                    "tensor {} has shape {rows}x{cols}, expected {}x{}",
                    tensors[idx].0,
                    layer.weight.rows(),
                    layer.weight.cols()
                )));
            }
            layer.weight.as_mut_slice().copy_from_slice(data);
            idx += 1;
            let (_, rows, cols, data) = &tensors[idx];
            if *rows != 1 || *cols != layer.bias.len() {
                return Err(CliError::Data(format!(
                    "tensor {} has shape {rows}x{cols}, expected 1x{}",
                    tensors[idx].0,
                    layer.bias.len()
                )));
            }
            layer.bias.copy_from_slice(data);
            idx += 1;
        }
        Ok(())
    };
    apply(&mut model.trunk)?;
    apply(&mut model.alpha.stem)?;
    apply(&mut model.alpha.box_tail)?;
    apply(&mut model.alpha.cls)?;
    if model.beta.is_some() {
        let mut beta = model.beta.take().unwrap();
        apply(&mut beta.stem)?;
        apply(&mut beta.box_tail)?;
        apply(&mut beta.cls)?;
        model.beta = Some(beta);
    }
    Ok(model)
}

//! Model file format.
//!
//! ```text
//! b"CDMF" | u32 version (1) | u32 header_len | header JSON
//! then, for each section listed in the header, in order:
//!   u32 name_len | name bytes | CDT1 tensor
//! ```
//!
//! The header is `{"format", "version", "spec", "provenance", "sections"}`;
//! `spec` is a [`BackboneSpec`], `sections` the ordered section names.
//! Momentum buffers and gradients are not stored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackboneSpec, ConvLayer, LinearLayer, ModelState, Provenance};
use crate::error::{format_err, Result};
use crate::tensor::io::{read_tensor, read_u32, write_tensor};
use crate::tensor::{Param, Tensor};

const MAGIC: &[u8; 4] = b"CDMF";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    spec: BackboneSpec,
    provenance: Provenance,
    sections: Vec<String>,
}

impl ModelState<f32> {
    /// Named tensors in file order.
    pub fn sections(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push((format!("{}.weight", c.name), &c.weight.value));
            out.push((format!("{}.bias", c.name), &c.bias.value));
            out.push((format!("{}.gamma", c.name), &c.gamma.value));
            out.push((format!("{}.beta", c.name), &c.beta.value));
            out.push((format!("{}.running_mean", c.name), &c.running_mean));
            out.push((format!("{}.running_var", c.name), &c.running_var));
        }
        for (j, l) in self.head.iter().enumerate() {
            out.push((format!("head.{j}.weight"), &l.weight.value));
            out.push((format!("head.{j}.bias"), &l.bias.value));
        }
        out
    }

    /// FNV-1a hash of every section's CDT1 encoding.
    pub fn section_hashes(&self) -> Vec<(String, u64)> {
        self.sections()
            .into_iter()
            .map(|(n, t)| (n, crate::hash::fnv1a(&crate::tensor::io::tensor_to_bytes(t))))
            .collect()
    }
}

pub fn model_to_bytes(model: &ModelState) -> Vec<u8> {
    let sections = model.sections();
    let header = Header {
        format: "pixcond-model".into(),
        version: VERSION,
        spec: model.spec.clone(),
        provenance: model.provenance.clone(),
        sections: sections.iter().map(|(n, _)| n.clone()).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in sections {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
    }
    out
}

pub fn save_model(model: &ModelState, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    let bytes = std::fs::read(path)?;
    model_from_bytes(&bytes, &path.display().to_string())
}

/// Parses a model file; `origin` prefixes error locations.
pub fn model_from_bytes(bytes: &[u8], origin: &str) -> Result<ModelState> {
    let r = &mut &bytes[..];
    let loc = |s: &str| format!("{origin}: {s}");
    let mut magic = [0u8; 4];
    if r.len() < 4 {
        return Err(format_err(loc("magic"), "file too short"));
    }
    magic.copy_from_slice(&r[..4]);
    *r = &r[4..];
    if &magic != MAGIC {
        return Err(format_err(loc("magic"), format!("expected CDMF, found {magic:?}")));
    }
    let version = read_u32(r, &loc("version"), "version")?;
    if version != VERSION {
        return Err(format_err(loc("version"), format!("unsupported version {version}")));
    }
    let len = read_u32(r, &loc("header"), "header length")? as usize;
    if r.len() < len {
        return Err(format_err(loc("header"), "truncated header"));
    }
    let header: Header = serde_json::from_slice(&r[..len])
        .map_err(|e| format_err(loc("header"), e.to_string()))?;
    *r = &r[len..];
    header
        .spec
        .validate()
        .map_err(|e| format_err(loc("header.spec"), e.to_string()))?;

    // Build an empty skeleton and fill it section by section.
    let mut model = super::init_model_as::<f32>(&header.spec, 0)?;
    model.provenance = header.provenance;
    let expected: Vec<(String, Vec<usize>)> = model
        .sections()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if header.sections.len() != expected.len()
        || header.sections.iter().zip(&expected).any(|(a, (b, _))| a != b)
    {
        return Err(format_err(
            loc("header.sections"),
            "section list does not match the spec",
        ));
    }
    let mut loaded = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let here = loc(&format!("section `{name}`"));
        if r.is_empty() {
            return Err(format_err(here, "missing section"));
        }
        let n = read_u32(r, &here, "name length")? as usize;
        if r.len() < n {
            return Err(format_err(here, "truncated section name"));
        }
        if &r[..n] != name.as_bytes() {
            return Err(format_err(
                here,
                format!("found section `{}`", String::from_utf8_lossy(&r[..n])),
            ));
        }
        *r = &r[n..];
        let t = read_tensor(r, &here)?;
        if t.shape() != shape.as_slice() {
            return Err(format_err(
                here,
                format!("shape {:?}, spec requires {shape:?}", t.shape()),
            ));
        }
        loaded.push(t);
    }
    if !r.is_empty() {
        return Err(format_err(loc("trailer"), format!("{} trailing bytes", r.len())));
    }
    let mut it = loaded.into_iter();
    let mut next = || it.next().expect("section count checked");
    for c in &mut model.convs {
        *c = ConvLayer {
            name: std::mem::take(&mut c.name),
            stride: c.stride,
            pad: c.pad,
            weight: Param::new(next()),
            bias: Param::new(next()),
            gamma: Param::new(next()),
            beta: Param::new(next()),
            running_mean: next(),
            running_var: next(),
        };
    }
    for l in &mut model.head {
        *l = LinearLayer {
            weight: Param::new(next()),
            bias: Param::new(next()),
        };
    }
    Ok(model)
}

//! On-disk formats.
//!
//! A model file is one ASCII header line followed by the flat parameter
//! vector as little-endian `f64`:
//!
//! ```text
//! flowcps-mlp dim=2 hidden=64,64 activation=tanh params=4546\n
//! <4546 * 8 bytes>
//! ```
//!
//! Plain arrays (trajectory state dumps) use the same layout with a
//! `flowcps-f64 shape=R,C` header. Training metadata goes into a
//! `key = value` sidecar next to the model.

use std::fs;
use std::path::{Path, PathBuf};

use super::mlp::{Activation, Mlp, MlpArchitecture};
use crate::error::{Error, Result};

const MLP_MAGIC: &str = "flowcps-mlp";
const ARRAY_MAGIC: &str = "flowcps-f64";

fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format("header is not UTF-8".into()))?;
    Ok((header, &bytes[nl + 1..]))
}

fn decode_f64s(body: &[u8], expected: usize) -> Result<Vec<f64>> {
    if body.len() != expected * 8 {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            expected * 8,
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn header_fields(header: &str, magic: &str) -> Result<Vec<(String, String)>> {
    let mut parts = header.split_whitespace();
    if parts.next() != Some(magic) {
        return Err(Error::Format(format!("expected `{magic}` header")));
    }
    parts
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Format(format!("bad header field `{kv}`")))
        })
        .collect()
}

fn field<'a>(fields: &'a [(String, String)], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Format(format!("header lacks `{key}`")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Format(format!("bad integer `{s}`")))
}

pub fn encode_mlp(mlp: &Mlp) -> Vec<u8> {
    let arch = mlp.arch();
    let hidden = arch
        .hidden()
        .iter()
        .map(|h| h.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut out = format!(
        "{MLP_MAGIC} dim={} hidden={hidden} activation={} params={}\n",
        arch.dim(),
        arch.activation(),
        mlp.params().len()
    )
    .into_bytes();
    for p in mlp.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_mlp(bytes: &[u8]) -> Result<Mlp> {
    let (header, body) = split_header(bytes)?;
    let fields = header_fields(header, MLP_MAGIC)?;
    let dim = parse_usize(field(&fields, "dim")?)?;
    let hidden = field(&fields, "hidden")?
        .split(',')
        .map(parse_usize)
        .collect::<Result<Vec<_>>>()?;
    let activation: Activation = field(&fields, "activation")?
        .parse()
        .map_err(|e: Error| Error::Format(e.to_string()))?;
    let n = parse_usize(field(&fields, "params")?)?;
    let arch =
        MlpArchitecture::new(dim, hidden, activation).map_err(|e| Error::Format(e.to_string()))?;
    if arch.param_count() != n {
        return Err(Error::Format(format!(
            "header declares {n} parameters, architecture has {}",
            arch.param_count()
        )));
    }
    Mlp::from_params(arch, decode_f64s(body, n)?)
}

pub fn save_mlp(path: &Path, mlp: &Mlp) -> Result<()> {
    fs::write(path, encode_mlp(mlp))?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    decode_mlp(&fs::read(path)?)
}

/// Row-major `rows x cols` array of `f64`.
pub fn encode_array(rows: usize, cols: usize, data: &[f64]) -> Result<Vec<u8>> {
    if rows * cols != data.len() {
        return Err(Error::Format(format!(
            "shape {rows}x{cols} does not match {} values",
            data.len()
        )));
    }
    let mut out = format!("{ARRAY_MAGIC} shape={rows},{cols}\n").into_bytes();
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_array(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let (header, body) = split_header(bytes)?;
    let fields = header_fields(header, ARRAY_MAGIC)?;
    let (r, c) = field(&fields, "shape")?
        .split_once(',')
        .ok_or_else(|| Error::Format("shape must be `rows,cols`".into()))?;
    let (rows, cols) = (parse_usize(r)?, parse_usize(c)?);
    Ok((rows, cols, decode_f64s(body, rows * cols)?))
}

/// Sidecar written next to a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub seed: u64,
    pub steps: usize,
    pub final_loss: f64,
    pub data: String,
}

impl ModelMeta {
    pub fn sidecar_path(model: &Path) -> PathBuf {
        let mut p = model.as_os_str().to_owned();
        p.push(".meta");
        PathBuf::from(p)
    }

    pub fn to_text(&self) -> String {
        format!(
            "seed = {}\nsteps = {}\nfinal_loss = {}\ndata = {}\n",
            self.seed,
            self.steps,
            crate::fmt_f64(self.final_loss),
            self.data
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            text.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim())
                .ok_or_else(|| Error::Format(format!("metadata lacks `{key}`")))
        };
        Ok(ModelMeta {
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::Format("bad seed".into()))?,
            steps: parse_usize(get("steps")?)?,
            final_loss: get("final_loss")?
                .parse()
                .map_err(|_| Error::Format("bad final_loss".into()))?,
            data: get("data")?.to_string(),
        })
    }
}

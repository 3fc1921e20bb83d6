//! Binary parameter snapshots.
//!
//! Layout (little-endian): magic `MULANNCK`, u32 version, u32 length plus
//! `key=value` architecture lines, u32 entry count, then per entry a u32
//! name length, the name, u32 rank, u64 dims and f64 values.

use super::{build, ArchitectureSpec, NetworkError, NetworkParams, Variant};
use crate::autodiff::Tensor;
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 8] = b"MULANNCK";
const VERSION: u32 = 1;

fn spec_text(spec: &ArchitectureSpec) -> String {
    let dims: Vec<String> = spec.input_shape.iter().map(|d| d.to_string()).collect();
    format!(
        "variant={}\ninput_shape={}\nclasses={}\ndomains={}\nunlabeled_domains={}\nmada={}\n",
        spec.variant,
        dims.join(","),
        spec.classes,
        spec.domains,
        spec.unlabeled_domains,
        spec.mada
    )
}

fn parse_spec(text: &str, offset: usize) -> Result<ArchitectureSpec, NetworkError> {
    let err = |reason: String| NetworkError::Checkpoint { offset, reason };
    let mut variant = None;
    let mut input_shape = None;
    let (mut classes, mut domains, mut unlabeled, mut mada) = (None, None, None, None);
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (key, value) = line.split_once('=').ok_or_else(|| err(format!("malformed metadata line `{line}`")))?;
        let num = || value.parse::<usize>().map_err(|_| err(format!("bad value for {key}: `{value}`")));
        match key {
            "variant" => variant = Some(value.parse::<Variant>().map_err(|e| err(e.to_string()))?),
            "input_shape" => {
                input_shape = Some(
                    value
                        .split(',')
                        .map(|d| d.parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| err(format!("bad input_shape `{value}`")))?,
                )
            }
            "classes" => classes = Some(num()?),
            "domains" => domains = Some(num()?),
            "unlabeled_domains" => unlabeled = Some(num()?),
            "mada" => mada = Some(value.parse::<bool>().map_err(|_| err(format!("bad mada `{value}`")))?),
            other => return Err(err(format!("unknown metadata key `{other}`"))),
        }
    }
    let missing = |k: &str| err(format!("metadata missing `{k}`"));
    Ok(ArchitectureSpec {
        variant: variant.ok_or_else(|| missing("variant"))?,
        input_shape: input_shape.ok_or_else(|| missing("input_shape"))?,
        classes: classes.ok_or_else(|| missing("classes"))?,
        domains: domains.ok_or_else(|| missing("domains"))?,
        unlabeled_domains: unlabeled.ok_or_else(|| missing("unlabeled_domains"))?,
        mada: mada.ok_or_else(|| missing("mada"))?,
    })
}

pub fn write_checkpoint(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let meta = spec_text(&params.spec);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    let entries = params.named_tensors();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NetworkError> {
        if self.bytes.len() - self.pos < n {
            return Err(NetworkError::Checkpoint {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NetworkError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, NetworkError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn fail(&self, reason: String) -> NetworkError {
        NetworkError::Checkpoint { offset: self.pos, reason }
    }
}

/// Parses a snapshot and checks every tensor against the architecture it
/// declares.
pub fn read_checkpoint(bytes: &[u8]) -> Result<NetworkParams, NetworkError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(NetworkError::Checkpoint { offset: 0, reason: "bad magic".into() });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta_at = r.pos;
    let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
        .map_err(|_| NetworkError::Checkpoint { offset: meta_at, reason: "metadata is not UTF-8".into() })?;
    let spec = parse_spec(meta, meta_at)?;
    // Seed is irrelevant: every value is overwritten below.
    let mut params = build(&spec, 0)?;
    let expected: Vec<(String, Vec<usize>)> =
        params.named_tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    let count = r.u32("entry count")? as usize;
    if count != expected.len() {
        return Err(r.fail(format!("{count} entries, architecture needs {}", expected.len())));
    }
    let mut loaded = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8_lossy(r.take(name_len, "name")?).into_owned();
        if &name != want_name {
            return Err(r.fail(format!("expected entry `{want_name}`, found `{name}`")));
        }
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        if &shape != want_shape {
            return Err(r.fail(format!("`{name}` has shape {shape:?}, expected {want_shape:?}")));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8, "values")?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        loaded.push(Tensor::new(shape, values)?);
    }
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    for (slot, t) in params.tensors_mut().into_iter().zip(loaded) {
        *slot = t;
    }
    Ok(params)
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<(), NetworkError> {
    fs::write(path, write_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams, NetworkError> {
    read_checkpoint(&fs::read(path)?)
}

//! `MSHC` checkpoint files: magic `MSHC1\0`, `u32` version, `u64` network
//! hash, `u32` epoch, then little-endian `f64` arrays in parameter order:
//! `theta0`, `alpha`, and for the outer and step-size optimizers a `u64`
//! step count followed by the first and second moments.

use std::path::Path;

use metashape_core::meta::{AdamState, MetaState};
use metashape_core::siren::{zero_params, NetSpec};
use metashape_core::tensor::ParamVector;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 6] = b"MSHC1\0";
pub const VERSION: u32 = 1;

pub fn encode(state: &MetaState) -> Vec<u8> {
    let q = state.theta0.numel();
    let mut out = Vec::with_capacity(26 + 8 * (6 * q + 2));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&state.spec.hash().to_le_bytes());
    out.extend_from_slice(&state.epoch.to_le_bytes());
    let mut put = |p: &ParamVector| {
        for v in p.flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    put(&state.theta0);
    put(&state.alpha);
    for opt in [&state.outer_opt, &state.alpha_opt] {
        out.extend_from_slice(&opt.step.to_le_bytes());
        for p in [&opt.m, &opt.v] {
            for v in p.flatten() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], (u64, String)> {
        if self.bytes.len() - self.at < n {
            return Err((self.bytes.len() as u64, "truncated checkpoint".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, (u64, String)> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, (u64, String)> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn params(&mut self, layout: &ParamVector) -> std::result::Result<ParamVector, (u64, String)> {
        let raw = self.take(8 * layout.numel())?;
        let flat: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        layout
            .unflatten(&flat)
            .map_err(|e| (self.at as u64, e.to_string()))
    }
}

/// Decodes a checkpoint written for `spec`; nothing is returned unless the
/// whole file is valid.
pub fn decode(bytes: &[u8], spec: &NetSpec) -> std::result::Result<MetaState, (u64, String)> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len())
        .map_err(|_| (0, "bad magic".to_string()))?
        != MAGIC
    {
        return Err((0, "bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err((6, format!("unsupported version {version}")));
    }
    let hash = r.u64()?;
    if hash != spec.hash() {
        return Err((
            10,
            format!(
                "network hash {hash:#018x} does not match {:#018x}",
                spec.hash()
            ),
        ));
    }
    let epoch = r.u32()?;
    let layout = zero_params(spec);
    let theta0 = r.params(&layout)?;
    let alpha = r.params(&layout)?;
    let mut opts = Vec::with_capacity(2);
    for _ in 0..2 {
        let step = r.u64()?;
        let m = r.params(&layout)?;
        let v = r.params(&layout)?;
        opts.push(AdamState {
            m,
            v,
            step,
            ..AdamState::new(&layout)
        });
    }
    if r.at != bytes.len() {
        return Err((r.at as u64, "trailing bytes after checkpoint".into()));
    }
    let alpha_opt = opts.pop().unwrap();
    let outer_opt = opts.pop().unwrap();
    Ok(MetaState {
        spec: *spec,
        theta0,
        alpha,
        outer_opt,
        alpha_opt,
        epoch,
    })
}

pub fn save(path: &Path, state: &MetaState) -> Result<()> {
    std::fs::write(path, encode(state)).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path, spec: &NetSpec) -> Result<MetaState> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, spec).map_err(|(offset, detail)| CliError::Format {
        path: path.to_path_buf(),
        offset,
        detail,
    })
}

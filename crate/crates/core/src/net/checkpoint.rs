//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `DKLJN\0\0\0`, u32 version, u64 header length
//! and a JSON header (network config, loss weights, epoch, Adam
//! hyperparameters), then the network layers (u64 count; per layer u64 in,
//! u64 out, row-major weights, bias), then Adam moments (u64 length, `m`,
//! `v`), then a u8 flag and optionally the feature-extractor layers.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::{Ljn, LossWeights, Mlp, NetworkConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DKLJN\0\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: Ljn,
    pub weights: LossWeights,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
    pub adam: Option<Adam>,
    pub extractor: Option<Mlp>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    network: NetworkConfig,
    weights: LossWeights,
    epoch: usize,
    adam: Option<AdamHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

fn bad(msg: &str) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64s(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 26));
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

fn write_mlp(w: &mut impl Write, mlp: &Mlp) -> std::io::Result<()> {
    let dims = mlp.dims();
    write_u64(w, (dims.len() - 1) as u64)?;
    let mut o = 0;
    for l in 0..dims.len() - 1 {
        let (i, n) = (dims[l], dims[l + 1]);
        write_u64(w, i as u64)?;
        write_u64(w, n as u64)?;
        write_f64s(w, &mlp.params()[o..o + i * n + n])?;
        o += i * n + n;
    }
    Ok(())
}

fn read_mlp(r: &mut impl Read) -> Result<Mlp> {
    let layers = read_u64(r)? as usize;
    if layers == 0 || layers > 1024 {
        return Err(bad("implausible layer count"));
    }
    let mut dims = Vec::with_capacity(layers + 1);
    let mut params = Vec::new();
    for l in 0..layers {
        let i = read_u64(r)? as usize;
        let n = read_u64(r)? as usize;
        if i == 0 || n == 0 || i > 1 << 16 || n > 1 << 16 {
            return Err(bad("implausible layer shape"));
        }
        if l == 0 {
            dims.push(i);
        } else if dims[l] != i {
            return Err(bad("layer shapes do not chain"));
        }
        dims.push(n);
        params.extend(read_f64s(r, i * n + n)?);
    }
    Mlp::from_parts(dims, params).ok_or_else(|| bad("inconsistent layer data"))
}

impl Checkpoint {
    pub fn new(net: Ljn) -> Self {
        Self {
            net,
            weights: LossWeights::default(),
            epoch: 0,
            adam: None,
            extractor: None,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            network: self.net.config.clone(),
            weights: self.weights,
            epoch: self.epoch,
            adam: self.adam.as_ref().map(|a| AdamHeader {
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                t: a.t,
            }),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(&e.to_string()))?;
        let io = |e: std::io::Error| bad(&e.to_string());
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        write_u64(&mut w, json.len() as u64).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        write_mlp(&mut w, &self.net.mlp).map_err(io)?;
        match &self.adam {
            Some(a) => {
                write_u64(&mut w, a.m.len() as u64).map_err(io)?;
                write_f64s(&mut w, &a.m).map_err(io)?;
                write_f64s(&mut w, &a.v).map_err(io)?;
            }
            None => write_u64(&mut w, 0).map_err(io)?,
        }
        match &self.extractor {
            Some(e) => {
                w.write_all(&[1]).map_err(io)?;
                write_mlp(&mut w, e).map_err(io)?;
            }
            None => w.write_all(&[0]).map_err(io)?,
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated checkpoint"))?;
        if &magic != MAGIC {
            return Err(bad("not a network checkpoint"));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v).map_err(|_| bad("truncated checkpoint"))?;
        let version = u32::from_le_bytes(v);
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let len = read_u64(&mut r)? as usize;
        if len > 1 << 20 {
            return Err(bad("implausible header length"));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| bad("truncated checkpoint"))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| bad(&format!("bad header: {e}")))?;
        header.network.validate()?;
        let mlp = read_mlp(&mut r)?;
        if mlp.dims() != header.network.dims().as_slice() {
            return Err(bad("layer shapes do not match the network config"));
        }
        let n = read_u64(&mut r)? as usize;
        let adam = match (&header.adam, n) {
            (Some(h), n) if n == mlp.params().len() => {
                let m = read_f64s(&mut r, n)?;
                let v = read_f64s(&mut r, n)?;
                Some(Adam {
                    beta1: h.beta1,
                    beta2: h.beta2,
                    eps: h.eps,
                    m,
                    v,
                    t: h.t,
                })
            }
            (None, 0) => None,
            _ => return Err(bad("optimizer state does not match the network")),
        };
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(|_| bad("truncated checkpoint"))?;
        let extractor = match flag[0] {
            0 => None,
            1 => Some(read_mlp(&mut r)?),
            _ => return Err(bad("bad extractor flag")),
        };
        let net = Ljn {
            config: header.network,
            mlp,
        };
        if !net.mlp.is_finite() {
            return Err(bad("non-finite parameters"));
        }
        Ok(Self {
            net,
            weights: header.weights,
            epoch: header.epoch,
            adam,
            extractor,
        })
    }

    /// Writes atomically through a temporary sibling file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&bytes[..])
    }
}

use std::fs;
use std::path::Path;

use super::mlp::{Activation, Linear, Mlp};
use super::nets::{Classifier, Oracle, ReconMode, Vae};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DIVC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// A trained network with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelCheckpoint {
    Vae(Vae),
    Classifier(Classifier),
    Oracle(Oracle),
}

impl ModelCheckpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Vae(_) => "vae",
            Self::Classifier(_) => "classifier",
            Self::Oracle(_) => "oracle",
        }
    }

    fn kind_id(&self) -> u8 {
        match self {
            Self::Vae(_) => 0,
            Self::Classifier(_) => 1,
            Self::Oracle(_) => 2,
        }
    }

    fn nets(&self) -> Vec<&Mlp> {
        match self {
            Self::Vae(v) => vec![&v.encoder, &v.decoder],
            Self::Classifier(c) => vec![&c.net],
            Self::Oracle(o) => vec![&o.trunk, &o.heads],
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.kind_id());
        let (recon, latent) = match self {
            Self::Vae(v) => (v.recon.id(), v.latent_dim as u32),
            _ => (0, 0),
        };
        out.push(recon);
        out.extend_from_slice(&latent.to_le_bytes());
        let nets = self.nets();
        out.push(nets.len() as u8);
        for net in &nets {
            out.push(net.hidden as u8);
            out.push(net.output as u8);
            let sizes = net.sizes();
            out.extend_from_slice(&(sizes.len() as u16).to_le_bytes());
            for s in sizes {
                out.extend_from_slice(&(s as u32).to_le_bytes());
            }
        }
        for net in &nets {
            for p in net.params() {
                out.push(p.shape().len() as u8);
                for &s in p.shape() {
                    out.extend_from_slice(&(s as u32).to_le_bytes());
                }
                for &v in p.data() {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                what: "checkpoint",
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                what: "checkpoint",
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let kind = r.u8()?;
        let recon = r.u8()?;
        let latent = r.u32()? as usize;
        let n_nets = r.u8()? as usize;
        let mut specs = Vec::with_capacity(n_nets);
        for _ in 0..n_nets {
            let hidden = activation(r.u8()?)?;
            let output = activation(r.u8()?)?;
            let n = r.u16()? as usize;
            if n < 2 {
                return Err(format_err("network with no layers"));
            }
            let sizes = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            specs.push((hidden, output, sizes));
        }
        let mut nets = Vec::with_capacity(n_nets);
        for (hidden, output, sizes) in specs {
            let mut layers = Vec::new();
            for w in sizes.windows(2) {
                let weight = r.tensor(&[w[0], w[1]])?;
                let bias = r.tensor(&[w[1]])?;
                layers.push(Linear { w: weight, b: bias });
            }
            nets.push(Mlp {
                layers,
                hidden,
                output,
            });
        }
        if r.at != bytes.len() {
            return Err(format_err("trailing bytes after parameters"));
        }
        let mut it = nets.into_iter();
        let mut next = || it.next().ok_or_else(|| format_err("too few networks for model kind"));
        let ck = match kind {
            0 => {
                let encoder = next()?;
                let decoder = next()?;
                let recon = ReconMode::from_id(recon).ok_or_else(|| format_err("unknown reconstruction mode"))?;
                if encoder.sizes().last() != Some(&(2 * latent)) || decoder.sizes()[0] != latent {
                    return Err(format_err("latent dimension disagrees with layer sizes"));
                }
                Self::Vae(Vae {
                    encoder,
                    decoder,
                    latent_dim: latent,
                    recon,
                })
            }
            1 => Self::Classifier(Classifier { net: next()? }),
            2 => Self::Oracle(Oracle {
                trunk: next()?,
                heads: next()?,
            }),
            k => return Err(format_err(&format!("unknown model kind {k}"))),
        };
        if ck.nets().len() != n_nets {
            return Err(format_err("unexpected network count for model kind"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
            });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn wrong_kind(path: &Path, want: &str, got: &ModelCheckpoint) -> Error {
    Error::Format {
        what: "checkpoint",
        message: format!("{} holds a {} model, expected {want}", path.display(), got.kind()),
    }
}

pub fn load_vae(path: &Path) -> Result<Vae> {
    match ModelCheckpoint::load(path)? {
        ModelCheckpoint::Vae(v) => Ok(v),
        other => Err(wrong_kind(path, "vae", &other)),
    }
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    match ModelCheckpoint::load(path)? {
        ModelCheckpoint::Classifier(c) => Ok(c),
        other => Err(wrong_kind(path, "classifier", &other)),
    }
}

pub fn load_oracle(path: &Path) -> Result<Oracle> {
    match ModelCheckpoint::load(path)? {
        ModelCheckpoint::Oracle(o) => Ok(o),
        other => Err(wrong_kind(path, "oracle", &other)),
    }
}

fn format_err(message: &str) -> Error {
    Error::Format {
        what: "checkpoint",
        message: message.to_string(),
    }
}

fn activation(id: u8) -> Result<Activation> {
    Activation::from_id(id).ok_or_else(|| format_err(&format!("unknown activation id {id}")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err("truncated file"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn tensor(&mut self, expected: &[usize]) -> Result<Tensor> {
        let rank = self.u8()? as usize;
        let shape = (0..rank).map(|_| self.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        if shape != expected {
            return Err(format_err(&format!(
                "tensor shape {shape:?} disagrees with descriptor {expected:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = self.take(4 * n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        Ok(Tensor::new(shape, data)?)
    }
}

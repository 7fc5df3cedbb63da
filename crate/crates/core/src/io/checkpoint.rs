//! Binary checkpoints for model parameters, identified by their SHA-256.
//!
//! Layout: the magic `LWCK0001`, a kind byte, then kind-specific fields as
//! little-endian u64 counts and f64 values. Parameters keep full precision.
//! An enhancer checkpoint holds only the mixing layer plus the digest of the
//! base checkpoint it was trained on; loading it checks that digest.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::enhancer::EnhancerModel;
use crate::error::{Error, Result};
use crate::flowmodel::{FusionLayer, ModelConfig, ToyDecoders, ToyFlowModel};

const MAGIC: &[u8; 8] = b"LWCK0001";
const KIND_FLOW: u8 = 1;
const KIND_ENHANCER: u8 = 2;
const KIND_DECODERS: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Flow(ToyFlowModel),
    Enhancer {
        base_sha256: [u8; 32],
        layer: FusionLayer,
    },
    Decoders(ToyDecoders),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vals: &[f64]) {
        self.u64(vals.len());
        vals.iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Format("count overflows".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n > (self.bytes.len() - self.at) / 8 {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Checkpoint::Flow(_) => "flow",
            Checkpoint::Enhancer { .. } => "enhancer",
            Checkpoint::Decoders(_) => "decoders",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        match self {
            Checkpoint::Flow(m) => {
                w.0.push(KIND_FLOW);
                let c = m.config();
                for v in [
                    c.channels,
                    c.hidden,
                    c.patch_radius,
                    c.embed_dim,
                    c.num_labels,
                ] {
                    w.u64(v);
                }
                w.f64(c.time_floor);
                w.f64s(m.params());
            }
            Checkpoint::Enhancer { base_sha256, layer } => {
                w.0.push(KIND_ENHANCER);
                w.0.extend_from_slice(base_sha256);
                w.u64(layer.channels());
                w.u64(layer.cond_channels());
                w.f64s(&layer.params());
            }
            Checkpoint::Decoders(d) => {
                w.0.push(KIND_DECODERS);
                w.f64s(&d.occ_weight);
                w.f64(d.occ_bias);
                w.f64s(&d.app_weight);
                d.app_bias.iter().for_each(|&v| w.f64(v));
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(8)?;
        if &magic[..4] != b"LWCK" {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        if magic[4..] != MAGIC[4..] {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {:?}",
                String::from_utf8_lossy(&magic[4..])
            )));
        }
        let ck = match r.take(1)?[0] {
            KIND_FLOW => {
                let mut f = [0usize; 5];
                for v in &mut f {
                    *v = r.u64()?;
                }
                let config = ModelConfig {
                    channels: f[0],
                    hidden: f[1],
                    patch_radius: f[2],
                    embed_dim: f[3],
                    num_labels: f[4],
                    time_floor: r.f64()?,
                };
                Checkpoint::Flow(ToyFlowModel::from_params(config, r.f64s()?)?)
            }
            KIND_ENHANCER => {
                let base_sha256: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
                let (c, cc) = (r.u64()?, r.u64()?);
                let mut layer = FusionLayer::zeros(c, cc)?;
                layer.set_params(&r.f64s()?)?;
                Checkpoint::Enhancer { base_sha256, layer }
            }
            KIND_DECODERS => {
                let occ_weight = r.f64s()?;
                let occ_bias = r.f64()?;
                let app_weight = r.f64s()?;
                let app_bias = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
                let d = ToyDecoders {
                    occ_weight,
                    occ_bias,
                    app_weight,
                    app_bias,
                };
                if d.app_weight.len() != ToyDecoders::default().app_weight.len() {
                    return Err(Error::Format(format!(
                        "decoder weight has {} values",
                        d.app_weight.len()
                    )));
                }
                Checkpoint::Decoders(d)
            }
            other => return Err(Error::Format(format!("unknown checkpoint kind {other}"))),
        };
        if r.at != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.at
            )));
        }
        Ok(ck)
    }

    pub fn sha256_hex(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn into_flow(self) -> Result<ToyFlowModel> {
        match self {
            Checkpoint::Flow(m) => Ok(m),
            other => Err(Error::Format(format!(
                "expected a flow checkpoint, found {}",
                other.kind_name()
            ))),
        }
    }

    pub fn into_decoders(self) -> Result<ToyDecoders> {
        match self {
            Checkpoint::Decoders(d) => Ok(d),
            other => Err(Error::Format(format!(
                "expected a decoder checkpoint, found {}",
                other.kind_name()
            ))),
        }
    }

    /// Checkpoint of an enhancer's mixing layer, tied to its base model.
    pub fn enhancer(model: &EnhancerModel) -> Self {
        let base = Checkpoint::Flow(model.base().clone()).to_bytes();
        Checkpoint::Enhancer {
            base_sha256: sha256(&base),
            layer: model.layer().clone(),
        }
    }

    /// Rebuilds the enhancer on top of `base`, which must be the model it
    /// was trained on.
    pub fn into_enhancer(self, base: &ToyFlowModel) -> Result<EnhancerModel> {
        match self {
            Checkpoint::Enhancer { base_sha256, layer } => {
                let actual = sha256(&Checkpoint::Flow(base.clone()).to_bytes());
                if actual != base_sha256 {
                    return Err(Error::Format(format!(
                        "enhancer was trained on base {}, got {}",
                        hex::encode(base_sha256),
                        hex::encode(actual)
                    )));
                }
                EnhancerModel::with_layer(base.clone(), layer)
            }
            other => Err(Error::Format(format!(
                "expected an enhancer checkpoint, found {}",
                other.kind_name()
            ))),
        }
    }
}

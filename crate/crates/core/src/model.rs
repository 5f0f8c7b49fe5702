//! Full trainable model and its checkpoint container.
//!
//! A checkpoint file is: magic `RAMMCKPT`, a u32 version, a u32 tensor
//! count, then named parameter tensors — u16 name length, utf-8 name,
//! u32 rank, u32 dims, and the data as little-endian 64-bit floats.
//! Scalar hyperparameters ride along as 1-element `meta.*` tensors so a
//! model is reconstructible from the file alone.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cibl::CiblParams;
use crate::encoder::{ClassifierHead, Encoder};
use crate::error::ModelError;
use crate::fusion::AttentionParams;
use crate::nn::{Linear, Mlp, ParamRef};
use crate::seeding::rng_for;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RAMMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// d_v + d_t of one item.
    pub feature_dim: usize,
    /// Narrative embedding dimension d̃.
    pub narrative_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Encoder output dimension d.
    pub repr_dim: usize,
    /// Latent dimension d_z.
    pub latent_dim: usize,
    /// Hidden width of the variational encoder/decoder nets.
    pub cibl_hidden: usize,
    pub encoder_slope: f64,
    pub attention_slope: f64,
    pub tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            narrative_dim: 64,
            hidden_width: 64,
            hidden_layers: 2,
            repr_dim: 32,
            latent_dim: 32,
            cibl_hidden: 64,
            encoder_slope: 0.01,
            attention_slope: 0.2,
            tau: 0.1,
        }
    }
}

/// Encoder, classifier head, fusion attention, and CIBL nets.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub head: ClassifierHead,
    pub fusion: AttentionParams,
    pub cibl: CiblParams,
}

impl Model {
    /// Seeded init; component streams are derived by label so adding or
    /// removing one component never shifts another's draws.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let encoder = Encoder::init(
            config.feature_dim,
            config.hidden_width,
            config.hidden_layers,
            config.repr_dim,
            config.encoder_slope,
            &mut rng_for(seed, "model-init.encoder"),
        );
        let head = ClassifierHead::init(config.repr_dim, &mut rng_for(seed, "model-init.head"));
        let fusion = AttentionParams::init(
            config.repr_dim,
            config.narrative_dim,
            config.attention_slope,
            &mut rng_for(seed, "model-init.fusion"),
        );
        let cibl = CiblParams::init(
            config.repr_dim,
            config.latent_dim,
            config.cibl_hidden,
            config.tau,
            &mut rng_for(seed, "model-init.cibl"),
        );
        Self {
            encoder,
            head,
            fusion,
            cibl,
        }
    }

    pub fn repr_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.head.zero_grad();
        self.fusion.zero_grad();
        self.cibl.zero_grad();
    }

    /// All parameter groups in a fixed order.
    pub fn param_refs(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.encoder.param_refs("encoder", &mut out);
        self.head.param_refs("head", &mut out);
        self.fusion.param_refs("fusion", &mut out);
        self.cibl.param_refs("cibl", &mut out);
        out
    }

    fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        self.encoder.named_tensors("encoder", &mut out);
        self.head.named_tensors("head", &mut out);
        self.fusion.named_tensors("fusion", &mut out);
        self.cibl.named_tensors("cibl", &mut out);
        out.push((
            "meta.encoder_slope".into(),
            vec![1],
            vec![self.encoder.slope],
        ));
        out.push((
            "meta.attention_slope".into(),
            vec![1],
            vec![self.fusion.slope],
        ));
        out.push(("meta.tau".into(), vec![1], vec![self.cibl.tau]));
        out
    }

    /// Serialize to the checkpoint byte format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.named_tensors();
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in tensors {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in &shape {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let file = File::create(path)
            .map_err(|e| ModelError::Checkpoint(format!("create {}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes())
            .and_then(|()| w.flush())
            .map_err(|e| ModelError::Checkpoint(format!("write {}: {e}", path.display())))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = bytes;
        let mut reader = TensorReader::new(&mut r)?;
        let tensors = reader.read_all()?;
        Self::from_tensor_map(tensors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| ModelError::Checkpoint(format!("open {}: {e}", path.display())))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| ModelError::Checkpoint(format!("read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    fn from_tensor_map(mut tensors: TensorMap) -> Result<Self, ModelError> {
        let encoder_slope = take_scalar(&mut tensors, "meta.encoder_slope")?;
        let attention_slope = take_scalar(&mut tensors, "meta.attention_slope")?;
        let tau = take_scalar(&mut tensors, "meta.tau")?;

        let entry_item = take_linear(&mut tensors, "encoder.entry_item")?;
        let entry_demo = take_linear(&mut tensors, "encoder.entry_demo")?;
        let trunk = take_mlp_layers(&mut tensors, "encoder.trunk")?;
        let out = take_linear(&mut tensors, "encoder.out")?;
        let encoder = Encoder {
            entry_item,
            entry_demo,
            trunk,
            out,
            slope: encoder_slope,
        };

        let head_w = take_tensor(&mut tensors, "head.w")?;
        let head_b = take_scalar(&mut tensors, "head.b")?;
        let head = ClassifierHead::from_parts(head_w.1, head_b);

        let (fusion_shape, fusion_w) = take_tensor(&mut tensors, "fusion.w")?;
        if fusion_shape.len() != 2 {
            return Err(ModelError::Checkpoint("fusion.w must be rank 2".into()));
        }
        let (_, fusion_a) = take_tensor(&mut tensors, "fusion.a")?;
        let repr_dim = fusion_shape[0];
        let narrative_dim = fusion_shape[1];
        let fusion = AttentionParams {
            repr_dim,
            narrative_dim,
            gw: vec![0.0; fusion_w.len()],
            ga: vec![0.0; fusion_a.len()],
            w: fusion_w,
            a: fusion_a,
            slope: attention_slope,
        };

        let f_mu = Mlp {
            layers: take_mlp_layers(&mut tensors, "cibl.f_mu")?,
            slope: 0.01,
        };
        let f_sigma = Mlp {
            layers: take_mlp_layers(&mut tensors, "cibl.f_sigma")?,
            slope: 0.01,
        };
        let g_psi = Mlp {
            layers: take_mlp_layers(&mut tensors, "cibl.g_psi")?,
            slope: 0.01,
        };
        let projection = if tensors.contains_key("cibl.projection.w") {
            Some(take_linear(&mut tensors, "cibl.projection")?)
        } else {
            None
        };
        let cibl = CiblParams {
            f_mu,
            f_sigma,
            g_psi,
            projection,
            tau,
        };

        Ok(Self {
            encoder,
            head,
            fusion,
            cibl,
        })
    }
}

type TensorMap = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

struct TensorReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    count: usize,
}

impl<'a> TensorReader<'a> {
    fn new(bytes: &mut &'a [u8]) -> Result<Self, ModelError> {
        let bytes = *bytes;
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("bad checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        Ok(Self {
            bytes,
            pos: 16,
            count,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Checkpoint("truncated checkpoint".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn read_all(&mut self) -> Result<TensorMap, ModelError> {
        let mut map = TensorMap::new();
        for _ in 0..self.count {
            let name_len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(self.take(name_len)?.to_vec())
                .map_err(|e| ModelError::Checkpoint(format!("bad tensor name: {e}")))?;
            let rank = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = self.take(numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            map.insert(name, (shape, data));
        }
        Ok(map)
    }
}

fn take_tensor(map: &mut TensorMap, name: &str) -> Result<(Vec<usize>, Vec<f64>), ModelError> {
    map.remove(name)
        .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name:?}")))
}

fn take_scalar(map: &mut TensorMap, name: &str) -> Result<f64, ModelError> {
    let (_, data) = take_tensor(map, name)?;
    data.first()
        .copied()
        .ok_or_else(|| ModelError::Checkpoint(format!("empty scalar {name:?}")))
}

fn take_linear(map: &mut TensorMap, prefix: &str) -> Result<Linear, ModelError> {
    let (shape, w) = take_tensor(map, &format!("{prefix}.w"))?;
    if shape.len() != 2 {
        return Err(ModelError::Checkpoint(format!("{prefix}.w must be rank 2")));
    }
    let (_, b) = take_tensor(map, &format!("{prefix}.b"))?;
    if b.len() != shape[0] {
        return Err(ModelError::Checkpoint(format!(
            "{prefix}.b length {} does not match {} rows",
            b.len(),
            shape[0]
        )));
    }
    Ok(Linear::from_parts(shape[1], shape[0], w, b))
}

fn take_mlp_layers(map: &mut TensorMap, prefix: &str) -> Result<Vec<Linear>, ModelError> {
    let mut layers = Vec::new();
    while map.contains_key(&format!("{prefix}.{}.w", layers.len())) {
        layers.push(take_linear(map, &format!("{prefix}.{}", layers.len()))?);
    }
    Ok(layers)
}

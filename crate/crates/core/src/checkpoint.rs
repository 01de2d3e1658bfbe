//! Binary checkpoint container shared by the planner and the baselines.
//!
//! Layout: magic, `u32` version, `u64` header length, JSON header, `u64`
//! payload length, little-endian `f64` parameters, then the SHA-256 of all
//! preceding bytes.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Grads, ParamStore};
use crate::baselines::{MultiClass, MultiClassConfig, MultiDense, SeqConfig, SeqModel};
use crate::domain::{DialogStateVector, MacroAction, TurnSample};
use crate::error::{PedpError, Result};
use crate::model::{PedpConfig, PedpModel, PredictOptions};
use crate::training::{LossBreakdown, LossWeights, PedpTrainer, Trainable};

pub const MAGIC: &[u8; 8] = b"PEDPCKPT";
pub const VERSION: u32 = 1;

/// Any trainable policy with its settings.
#[derive(Debug, Clone)]
pub enum PolicyModel {
    Pedp(PedpTrainer),
    MultiClass(MultiClass),
    MultiDense(MultiDense),
    Seq(SeqModel),
}

/// Per-kind configuration stored in the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Pedp {
        config: PedpConfig,
        weights: LossWeights,
        predict: PredictOptions,
    },
    MultiClass {
        config: MultiClassConfig,
        predict: PredictOptions,
    },
    MultiDense {
        config: PedpConfig,
        predict: PredictOptions,
    },
    Seq {
        config: SeqConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in scalars from the start of the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelSpec,
    pub vocab_digest: String,
    pub run_config_digest: String,
    pub params: Vec<ParamRecord>,
}

impl PolicyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            PolicyModel::Pedp(_) => "pedp",
            PolicyModel::MultiClass(_) => "multiclass",
            PolicyModel::MultiDense(_) => "multidense",
            PolicyModel::Seq(_) => "seq",
        }
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            PolicyModel::Pedp(t) => ModelSpec::Pedp {
                config: *t.model.config(),
                weights: t.weights,
                predict: t.predict,
            },
            PolicyModel::MultiClass(m) => ModelSpec::MultiClass {
                config: *m.config(),
                predict: m.predict,
            },
            PolicyModel::MultiDense(m) => ModelSpec::MultiDense {
                config: *m.model().config(),
                predict: m.0.predict,
            },
            PolicyModel::Seq(m) => ModelSpec::Seq { config: *m.config() },
        }
    }

    pub fn from_spec(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        Ok(match spec {
            ModelSpec::Pedp {
                config,
                weights,
                predict,
            } => PolicyModel::Pedp(PedpTrainer {
                model: PedpModel::from_params(config, params)?,
                weights,
                predict,
            }),
            ModelSpec::MultiClass { config, predict } => {
                let mut m = MultiClass::from_params(config, params)?;
                m.predict = predict;
                PolicyModel::MultiClass(m)
            }
            ModelSpec::MultiDense { config, predict } => {
                PolicyModel::MultiDense(MultiDense::new(PedpModel::from_params(config, params)?, predict))
            }
            ModelSpec::Seq { config } => PolicyModel::Seq(SeqModel::from_params(config, params)?),
        })
    }

    /// Prediction options, for models that have them.
    pub fn predict_options_mut(&mut self) -> Option<&mut PredictOptions> {
        match self {
            PolicyModel::Pedp(t) => Some(&mut t.predict),
            PolicyModel::MultiClass(m) => Some(&mut m.predict),
            PolicyModel::MultiDense(m) => Some(&mut m.0.predict),
            PolicyModel::Seq(_) => None,
        }
    }

    fn inner(&self) -> &dyn TrainableDyn {
        match self {
            PolicyModel::Pedp(m) => m,
            PolicyModel::MultiClass(m) => m,
            PolicyModel::MultiDense(m) => m,
            PolicyModel::Seq(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn TrainableDyn {
        match self {
            PolicyModel::Pedp(m) => m,
            PolicyModel::MultiClass(m) => m,
            PolicyModel::MultiDense(m) => m,
            PolicyModel::Seq(m) => m,
        }
    }
}

// object-safe mirror of `Trainable`
trait TrainableDyn {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn accumulate(&self, sample: &TurnSample, scale: f64, rng: &mut ChaCha8Rng, grads: &mut Grads)
        -> Result<LossBreakdown>;
    fn predict(&self, state: &DialogStateVector, rng: &mut ChaCha8Rng) -> Result<MacroAction>;
}

impl<T: Trainable> TrainableDyn for T {
    fn params(&self) -> &ParamStore {
        Trainable::params(self)
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        Trainable::params_mut(self)
    }
    fn accumulate(&self, sample: &TurnSample, scale: f64, rng: &mut ChaCha8Rng, grads: &mut Grads) -> Result<LossBreakdown> {
        Trainable::accumulate(self, sample, scale, rng, grads)
    }
    fn predict(&self, state: &DialogStateVector, rng: &mut ChaCha8Rng) -> Result<MacroAction> {
        Trainable::predict(self, state, rng)
    }
}

impl Trainable for PolicyModel {
    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().params_mut()
    }

    fn accumulate(&self, sample: &TurnSample, scale: f64, rng: &mut ChaCha8Rng, grads: &mut Grads) -> Result<LossBreakdown> {
        self.inner().accumulate(sample, scale, rng, grads)
    }

    fn predict(&self, state: &DialogStateVector, rng: &mut ChaCha8Rng) -> Result<MacroAction> {
        self.inner().predict(state, rng)
    }
}

pub fn to_bytes(model: &PolicyModel, vocab_digest: &str, run_config_digest: &str) -> Result<Vec<u8>> {
    let params = Trainable::params(model);
    let mut records = Vec::with_capacity(params.len());
    let mut offset = 0;
    for e in params.entries() {
        records.push(ParamRecord {
            name: e.name.clone(),
            shape: e.shape.clone(),
            offset,
        });
        offset += e.data.len();
    }
    let header = CheckpointHeader {
        model: model.spec(),
        vocab_digest: vocab_digest.into(),
        run_config_digest: run_config_digest.into(),
        params: records,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(64 + header.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(offset as u64 * 8).to_le_bytes());
    for e in params.entries() {
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn bad(msg: impl Into<String>) -> PedpError {
    PedpError::Checkpoint(msg.into())
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated file"))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(PolicyModel, CheckpointHeader)> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("content digest mismatch"));
    }
    let mut at = MAGIC.len();
    let version = u32::from_le_bytes(take(body, &mut at, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(take(body, &mut at, 8)?.try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(body, &mut at, hlen)?)?;
    let plen = u64::from_le_bytes(take(body, &mut at, 8)?.try_into().unwrap()) as usize;
    let payload = take(body, &mut at, plen)?;
    if at != body.len() || plen % 8 != 0 {
        return Err(bad("trailing or misaligned payload"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut params = ParamStore::new();
    let mut expected_offset = 0;
    for r in &header.params {
        let n: usize = r.shape.iter().product();
        if r.offset != expected_offset || r.offset + n > values.len() {
            return Err(bad(format!("parameter {} has an inconsistent offset", r.name)));
        }
        params.add(&r.name, &r.shape, values[r.offset..r.offset + n].to_vec());
        expected_offset += n;
    }
    if expected_offset != values.len() {
        return Err(bad("payload size does not match the parameter table"));
    }
    let model = PolicyModel::from_spec(header.model.clone(), params)?;
    Ok((model, header))
}

pub fn save(path: &Path, model: &PolicyModel, vocab_digest: &str, run_config_digest: &str) -> Result<()> {
    let bytes = to_bytes(model, vocab_digest, run_config_digest)?;
    std::fs::write(path, bytes).map_err(|e| PedpError::io(path, e))
}

pub fn load(path: &Path) -> Result<(PolicyModel, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| PedpError::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads and checks that the model was trained on the given vocabulary.
pub fn load_for_vocab(path: &Path, vocab_digest: &str) -> Result<(PolicyModel, CheckpointHeader)> {
    let (model, header) = load(path)?;
    if header.vocab_digest != vocab_digest {
        return Err(PedpError::VocabDigest {
            expected: vocab_digest.into(),
            found: header.vocab_digest,
        });
    }
    Ok((model, header))
}

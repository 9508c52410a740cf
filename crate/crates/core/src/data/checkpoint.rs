//! Binary checkpoint container.
//!
//! Layout (little endian): `BEDK`, u16 version, then three length-prefixed
//! text sections (topology, training config, RNG state), a u32 blob count and
//! the blobs. Each blob is a u16 name length, the name, a u8 rank, u32 dims,
//! the raw f64 values and a CRC-32 over everything from the name onwards.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;
use crate::models::{EditorSpec, ModelVariant, MultiTaskModel, OneStageModel, TwoStageModel};
use crate::nn::EncoderConfig;
use crate::numcore::{seeded, ParamStore, Tensor};
use crate::seqcore::{EditWindow, EditorClass, RepresentationMode};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BEDK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Snapshot of a ChaCha8 stream position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    fn to_text(&self) -> String {
        let seed: String = self.seed.iter().map(|b| format!("{b:02x}")).collect();
        format!(
            "seed={seed}\nstream={}\nword_pos={}\n",
            self.stream, self.word_pos
        )
    }

    fn from_text(text: &str) -> Result<Self, DataError> {
        let kv = parse_kv(text)?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| corrupt(format!("rng section lacks {k}")))
        };
        let hex = get("seed")?;
        if hex.len() != 64 {
            return Err(corrupt("rng seed must be 32 bytes".into()));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
                .map_err(|_| corrupt("bad rng seed".into()))?;
        }
        Ok(RngState {
            seed,
            stream: get("stream")?
                .parse()
                .map_err(|_| corrupt("bad rng stream".into()))?,
            word_pos: get("word_pos")?
                .parse()
                .map_err(|_| corrupt("bad rng position".into()))?,
        })
    }
}

impl Default for RngState {
    fn default() -> Self {
        RngState::capture(&seeded(0))
    }
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub topology: Vec<(String, String)>,
    pub config: Vec<(String, String)>,
    pub rng: RngState,
    pub blobs: Vec<(String, Tensor)>,
}

fn corrupt(msg: String) -> DataError {
    DataError::CorruptCheckpoint(msg)
}

fn kv_text(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn parse_kv(text: &str) -> Result<Vec<(String, String)>, DataError> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| corrupt(format!("malformed line {l:?}")))
        })
        .collect()
}

impl Checkpoint {
    pub fn topology_value(&self, key: &str) -> Option<&str> {
        self.topology
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for section in [
            kv_text(&self.topology),
            kv_text(&self.config),
            self.rng.to_text(),
        ] {
            out.extend_from_slice(&(section.len() as u32).to_le_bytes());
            out.extend_from_slice(section.as_bytes());
        }
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, t) in &self.blobs {
            let start = out.len();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let crc = crc32fast::hash(&out[start..]);
            out.extend_from_slice(&crc.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(corrupt("missing BEDK magic".into()));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(DataError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut text = || -> Result<String, DataError> {
            let n = r.u32()? as usize;
            String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| corrupt("section is not UTF-8".into()))
        };
        let topology = parse_kv(&text()?)?;
        let config = parse_kv(&text()?)?;
        let rng = RngState::from_text(&text()?)?;
        let count = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(count);
        for _ in 0..count {
            let start = r.pos;
            let n = r.u16()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| corrupt("blob name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let expected = crc32fast::hash(&bytes[start..r.pos]);
            if r.u32()? != expected {
                return Err(corrupt(format!("checksum mismatch in blob {name}")));
            }
            blobs.push((name, Tensor::from_vec(shape, data)));
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes after the last blob".into()));
        }
        Ok(Checkpoint {
            topology,
            config,
            rng,
            blobs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Everything needed to rebuild an untrained model of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub variant: ModelVariant,
    pub mode: RepresentationMode,
    pub window: EditWindow,
    pub editors: Vec<EditorSpec>,
    pub encoder: EncoderConfig,
    pub position_bias: bool,
}

impl Topology {
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let editors: Vec<String> = self
            .editors
            .iter()
            .map(|e| format!("{}:{}", e.id, e.class.name()))
            .collect();
        let e = &self.encoder;
        [
            ("variant", self.variant.name().to_string()),
            ("mode", self.mode.name().to_string()),
            ("window", self.window.to_string()),
            ("editors", editors.join(",")),
            ("d_embed", e.d_embed.to_string()),
            ("d_model", e.d_model.to_string()),
            ("heads", e.heads.to_string()),
            ("blocks", e.blocks.to_string()),
            ("ffn_hidden", e.ffn_hidden.to_string()),
            ("t_max", e.t_max.to_string()),
            ("position_bias", self.position_bias.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, DataError> {
        let get = |k: &str| {
            ck.topology_value(k)
                .ok_or_else(|| corrupt(format!("topology lacks {k}")))
        };
        let num = |k: &str| -> Result<usize, DataError> {
            get(k)?
                .parse()
                .map_err(|_| corrupt(format!("topology {k} is not a number")))
        };
        let editors = get("editors")?
            .split(',')
            .map(|s| {
                let (id, class) = s
                    .rsplit_once(':')
                    .ok_or_else(|| corrupt(format!("bad editor entry {s:?}")))?;
                let class = EditorClass::parse(class)
                    .ok_or_else(|| corrupt(format!("bad editor class {class:?}")))?;
                Ok(EditorSpec::new(id, class))
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(Topology {
            variant: get("variant")?.parse().map_err(corrupt)?,
            mode: get("mode")?
                .parse()
                .map_err(|e: crate::seqcore::SeqError| corrupt(e.to_string()))?,
            window: get("window")?
                .parse()
                .map_err(|e: crate::seqcore::SeqError| corrupt(e.to_string()))?,
            editors,
            encoder: EncoderConfig {
                d_embed: num("d_embed")?,
                d_model: num("d_model")?,
                heads: num("heads")?,
                blocks: num("blocks")?,
                ffn_hidden: num("ffn_hidden")?,
                t_max: num("t_max")?,
            },
            position_bias: get("position_bias")? == "true",
        })
    }
}

/// A trained model of any variant.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    OneStage(OneStageModel),
    TwoStage(TwoStageModel),
    MultiTask(MultiTaskModel),
}

impl TrainedModel {
    pub fn variant(&self) -> ModelVariant {
        match self {
            TrainedModel::OneStage(_) => ModelVariant::OneStage,
            TrainedModel::TwoStage(_) => ModelVariant::TwoStage,
            TrainedModel::MultiTask(_) => ModelVariant::MultiTask,
        }
    }

    pub fn predictor(&self) -> &(dyn crate::models::OutcomePredictor + Sync) {
        match self {
            TrainedModel::OneStage(m) => m,
            TrainedModel::TwoStage(m) => m,
            TrainedModel::MultiTask(m) => m,
        }
    }

    pub fn topology(&self) -> Topology {
        let p = match self {
            TrainedModel::OneStage(m) => &m.proportion,
            TrainedModel::TwoStage(m) => &m.proportion,
            TrainedModel::MultiTask(m) => &m.proportion,
        };
        Topology {
            variant: self.variant(),
            mode: p.mode,
            window: p.window,
            editors: p.editors.clone(),
            encoder: p.encoder_config,
            position_bias: p.position_bias,
        }
    }

    fn stores(&self) -> Vec<&ParamStore> {
        match self {
            TrainedModel::OneStage(m) => vec![&m.proportion.params],
            TrainedModel::TwoStage(m) => vec![&m.efficiency.params, &m.proportion.params],
            TrainedModel::MultiTask(m) => vec![&m.efficiency.params, &m.proportion.params],
        }
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        match self {
            TrainedModel::OneStage(m) => vec![&mut m.proportion.params],
            TrainedModel::TwoStage(m) => vec![&mut m.efficiency.params, &mut m.proportion.params],
            TrainedModel::MultiTask(m) => vec![&mut m.efficiency.params, &mut m.proportion.params],
        }
    }

    /// Untrained model with the given shape.
    pub fn build(topology: &Topology) -> Result<Self, DataError> {
        let mut rng = seeded(0);
        let t = topology;
        let single = || -> Result<EditorSpec, DataError> {
            match t.editors.as_slice() {
                [e] => Ok(e.clone()),
                other => Err(corrupt(format!(
                    "{} expects one editor, topology lists {}",
                    t.variant,
                    other.len()
                ))),
            }
        };
        Ok(match t.variant {
            ModelVariant::OneStage => TrainedModel::OneStage(OneStageModel::new(
                t.mode,
                t.window,
                t.encoder,
                t.position_bias,
                single()?,
                &mut rng,
            )?),
            ModelVariant::TwoStage => TrainedModel::TwoStage(TwoStageModel::new(
                t.mode,
                t.window,
                t.encoder,
                t.position_bias,
                single()?,
                &mut rng,
            )?),
            ModelVariant::MultiTask => TrainedModel::MultiTask(MultiTaskModel::new(
                t.mode,
                t.window,
                t.encoder,
                t.position_bias,
                t.editors.clone(),
                &mut rng,
            )?),
        })
    }

    pub fn to_checkpoint(&self, config: Vec<(String, String)>, rng: RngState) -> Checkpoint {
        let blobs = self
            .stores()
            .into_iter()
            .flat_map(|s| s.iter().map(|(_, n, t)| (n.to_string(), t.clone())))
            .collect();
        Checkpoint {
            topology: self.topology().to_pairs(),
            config,
            rng,
            blobs,
        }
    }

    /// Rebuild from a checkpoint of any variant.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, DataError> {
        let topology = Topology::from_checkpoint(ck)?;
        let mut model = Self::build(&topology)?;
        let expected: usize = model.stores().iter().map(|s| s.len()).sum();
        if expected != ck.blobs.len() {
            return Err(corrupt(format!(
                "checkpoint holds {} tensors, the topology needs {expected}",
                ck.blobs.len()
            )));
        }
        for (name, t) in &ck.blobs {
            let mut placed = false;
            for store in model.stores_mut() {
                if store.lookup(name).is_some() {
                    store
                        .set(name, t.clone())
                        .map_err(|e| corrupt(e.to_string()))?;
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(corrupt(format!("unexpected tensor {name}")));
            }
        }
        Ok(model)
    }

    fn expect(ck: &Checkpoint, variant: ModelVariant) -> Result<Self, DataError> {
        let found = ck.topology_value("variant").unwrap_or("?").to_string();
        if found != variant.name() {
            return Err(DataError::TopologyMismatch {
                expected: variant.name().to_string(),
                found,
            });
        }
        Self::from_checkpoint(ck)
    }
}

pub fn save_checkpoint(
    model: &TrainedModel,
    config: Vec<(String, String)>,
    rng: RngState,
    path: impl AsRef<Path>,
) -> Result<(), DataError> {
    model.to_checkpoint(config, rng).save(path)
}

/// Load a checkpoint of any variant.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(TrainedModel, Checkpoint), DataError> {
    let ck = Checkpoint::load(path)?;
    Ok((TrainedModel::from_checkpoint(&ck)?, ck))
}

pub fn load_two_stage(path: impl AsRef<Path>) -> Result<TwoStageModel, DataError> {
    match TrainedModel::expect(&Checkpoint::load(path)?, ModelVariant::TwoStage)? {
        TrainedModel::TwoStage(m) => Ok(m),
        _ => unreachable!("variant checked"),
    }
}

pub fn load_one_stage(path: impl AsRef<Path>) -> Result<OneStageModel, DataError> {
    match TrainedModel::expect(&Checkpoint::load(path)?, ModelVariant::OneStage)? {
        TrainedModel::OneStage(m) => Ok(m),
        _ => unreachable!("variant checked"),
    }
}

pub fn load_multitask(path: impl AsRef<Path>) -> Result<MultiTaskModel, DataError> {
    match TrainedModel::expect(&Checkpoint::load(path)?, ModelVariant::MultiTask)? {
        TrainedModel::MultiTask(m) => Ok(m),
        _ => unreachable!("variant checked"),
    }
}

//! Versioned binary checkpoint container: magic, version, config and
//! fusion blocks as key=value text, both vocabularies, then named
//! parameter records (name, dtype, shape, little-endian values).

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::fusion::{FusionConfig, FusionMode};
use super::model::{ParamSet, Seq2SeqModel};
use super::vocab::Vocabulary;
use super::{Arch, BatchType, NmtConfig, NmtError};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"LRMTS2S\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

/// A trained model plus its training position.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Seq2SeqModel,
    pub step: u64,
    pub best_dev_metric: f64,
}

fn config_to_kv(config: &NmtConfig) -> String {
    format!(
        "arch={}\nenc_layers={}\ndec_layers={}\nhidden={}\nembed={}\nheads={}\nffn={}\n\
         dropout={}\nlabel_smoothing={}\ntied={}\nbpe={}\nmin_word_freq={}\nbatch_type={}\n\
         batch_size={}\nlr={}\nwarmup={}\nrsqrt_decay={}\naverage_decay={}\npatience={}\n\
         max_epochs={}\nseed={}\n",
        config.arch.as_str(),
        config.enc_layers,
        config.dec_layers,
        config.hidden,
        config.embed,
        config.heads,
        config.ffn,
        config.dropout,
        config.label_smoothing,
        config.tied_decoder_embeddings,
        config.bpe,
        config.min_word_freq,
        config.batch_type.as_str(),
        config.batch_size,
        config.lr,
        config.warmup,
        config.rsqrt_decay,
        config
            .average_decay
            .map(|d| d.to_string())
            .unwrap_or_else(|| "none".to_string()),
        config.early_stop_patience,
        config.max_epochs,
        config.seed
    )
}

fn kv_to_config(text: &str) -> Result<NmtConfig, NmtError> {
    let mut config = NmtConfig::default();
    let bad = |key: &str| NmtError::Malformed {
        what: "checkpoint config",
        reason: format!("bad value for {key}"),
    };
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        match key {
            "arch" => config.arch = Arch::parse(value).ok_or_else(|| bad(key))?,
            "enc_layers" => config.enc_layers = value.parse().map_err(|_| bad(key))?,
            "dec_layers" => config.dec_layers = value.parse().map_err(|_| bad(key))?,
            "hidden" => config.hidden = value.parse().map_err(|_| bad(key))?,
            "embed" => config.embed = value.parse().map_err(|_| bad(key))?,
            "heads" => config.heads = value.parse().map_err(|_| bad(key))?,
            "ffn" => config.ffn = value.parse().map_err(|_| bad(key))?,
            "dropout" => config.dropout = value.parse().map_err(|_| bad(key))?,
            "label_smoothing" => config.label_smoothing = value.parse().map_err(|_| bad(key))?,
            "tied" => config.tied_decoder_embeddings = value.parse().map_err(|_| bad(key))?,
            "bpe" => config.bpe = value.parse().map_err(|_| bad(key))?,
            "min_word_freq" => config.min_word_freq = value.parse().map_err(|_| bad(key))?,
            "batch_type" => config.batch_type = BatchType::parse(value).ok_or_else(|| bad(key))?,
            "batch_size" => config.batch_size = value.parse().map_err(|_| bad(key))?,
            "lr" => config.lr = value.parse().map_err(|_| bad(key))?,
            "warmup" => config.warmup = value.parse().map_err(|_| bad(key))?,
            "rsqrt_decay" => config.rsqrt_decay = value.parse().map_err(|_| bad(key))?,
            "average_decay" => {
                config.average_decay = if value == "none" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad(key))?)
                }
            }
            "patience" => config.early_stop_patience = value.parse().map_err(|_| bad(key))?,
            "max_epochs" => config.max_epochs = value.parse().map_err(|_| bad(key))?,
            "seed" => config.seed = value.parse().map_err(|_| bad(key))?,
            _ => {
                return Err(NmtError::Malformed {
                    what: "checkpoint config",
                    reason: format!("unknown key {key:?}"),
                })
            }
        }
    }
    Ok(config)
}

fn fusion_to_kv(fusion: &FusionConfig) -> String {
    let modes: Vec<&str> = fusion.modes.iter().map(|m| m.as_str()).collect();
    format!(
        "modes={}\nfreeze={}\nprovider_dim={}\n",
        modes.join(","),
        fusion.freeze_embeddings,
        fusion.provider_dim
    )
}

fn kv_to_fusion(text: &str) -> Result<FusionConfig, NmtError> {
    let mut fusion = FusionConfig::none();
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        match key {
            "modes" => {
                for mode in value.split(',').filter(|m| !m.is_empty()) {
                    fusion.modes.insert(FusionMode::parse(mode).ok_or_else(|| {
                        NmtError::Malformed {
                            what: "checkpoint fusion",
                            reason: format!("unknown mode {mode:?}"),
                        }
                    })?);
                }
            }
            "freeze" => {
                fusion.freeze_embeddings = value.parse().map_err(|_| NmtError::Malformed {
                    what: "checkpoint fusion",
                    reason: "bad freeze flag".into(),
                })?
            }
            "provider_dim" => {
                fusion.provider_dim = value.parse().map_err(|_| NmtError::Malformed {
                    what: "checkpoint fusion",
                    reason: "bad provider_dim".into(),
                })?
            }
            _ => {}
        }
    }
    Ok(fusion)
}

fn write_block(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn write_vocab(out: &mut Vec<u8>, vocab: &Vocabulary) {
    out.extend_from_slice(&(vocab.len() as u32).to_le_bytes());
    for token in vocab.tokens() {
        write_block(out, token.as_bytes());
    }
    out.extend_from_slice(&(vocab.tag_ids().len() as u32).to_le_bytes());
    for &tag in vocab.tag_ids() {
        out.extend_from_slice(&tag.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NmtError> {
        if self.pos + n > self.bytes.len() {
            return Err(NmtError::Malformed {
                what: "checkpoint",
                reason: "truncated file".into(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, NmtError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NmtError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NmtError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self) -> Result<&'a [u8], NmtError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    fn string(&mut self) -> Result<String, NmtError> {
        String::from_utf8(self.block()?.to_vec()).map_err(|_| NmtError::Malformed {
            what: "checkpoint",
            reason: "non-utf8 string".into(),
        })
    }

    fn vocab(&mut self) -> Result<Vocabulary, NmtError> {
        let count = self.u32()? as usize;
        let mut tokens = Vec::with_capacity(count);
        for _ in 0..count {
            tokens.push(self.string()?);
        }
        let n_tags = self.u32()? as usize;
        let mut tags = Vec::with_capacity(n_tags);
        for _ in 0..n_tags {
            tags.push(self.u32()?);
        }
        for (i, expected) in super::vocab::SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*expected) {
                return Err(NmtError::Malformed {
                    what: "checkpoint vocabulary",
                    reason: format!("special {expected:?} not at id {i}"),
                });
            }
        }
        if tags.iter().any(|&t| t as usize >= tokens.len()) {
            return Err(NmtError::Malformed {
                what: "checkpoint vocabulary",
                reason: "tag id out of range".into(),
            });
        }
        Ok(Vocabulary::from_parts(tokens, tags))
    }
}

/// Serialize with the requested on-disk precision. f32 storage loses
/// roughly 1e-7 relative precision per value.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path, dtype: Dtype) -> Result<(), NmtError> {
    let model = &checkpoint.model;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    write_block(&mut out, config_to_kv(&model.config).as_bytes());
    write_block(&mut out, fusion_to_kv(&model.fusion).as_bytes());
    write_vocab(&mut out, &model.src_vocab);
    write_vocab(&mut out, &model.tgt_vocab);
    out.extend_from_slice(&checkpoint.step.to_le_bytes());
    out.extend_from_slice(&checkpoint.best_dev_metric.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, tensor) in model.params.names().iter().zip(&model.params.tensors) {
        write_block(&mut out, name.as_bytes());
        out.push(match dtype {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        });
        out.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
        for &dim in &tensor.shape {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        match dtype {
            Dtype::F32 => {
                for &v in &tensor.data {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for &v in &tensor.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out.extend_from_slice(&(model.frozen.len() as u32).to_le_bytes());
    for &idx in &model.frozen {
        out.extend_from_slice(&(idx as u32).to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NmtError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut reader = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if reader.take(8)? != MAGIC {
        return Err(NmtError::Malformed {
            what: "checkpoint",
            reason: "bad magic".into(),
        });
    }
    let version = reader.u32()?;
    if version != VERSION {
        return Err(NmtError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let config = kv_to_config(&reader.string()?)?;
    let fusion = kv_to_fusion(&reader.string()?)?;
    let src_vocab = reader.vocab()?;
    let tgt_vocab = reader.vocab()?;
    let step = reader.u64()?;
    let best_dev_metric = reader.f64()?;

    let mut model = Seq2SeqModel::new(config, fusion, src_vocab, tgt_vocab)?;
    let expected: Vec<String> = model.params.names().to_vec();
    let mut seen = vec![false; expected.len()];

    let n_params = reader.u32()? as usize;
    let mut loaded = ParamSet::default();
    for _ in 0..n_params {
        let name = reader.string()?;
        let dtype = match reader.take(1)?[0] {
            0 => Dtype::F32,
            1 => Dtype::F64,
            other => {
                return Err(NmtError::Malformed {
                    what: "checkpoint",
                    reason: format!("unknown dtype tag {other}"),
                })
            }
        };
        let ndim = reader.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(reader.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = match dtype {
            Dtype::F32 => reader
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => reader
                .take(numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        loaded.add(&name, Tensor::new(shape, data));
    }
    for (i, name) in expected.iter().enumerate() {
        match loaded.position(name) {
            Some(_) => {
                let stored = loaded.get(name);
                let target = model.params.get_mut(name);
                if stored.shape != target.shape {
                    return Err(NmtError::ShapeMismatch(format!(
                        "parameter {name:?}: checkpoint {:?} vs model {:?}",
                        stored.shape, target.shape
                    )));
                }
                *target = stored.clone();
                seen[i] = true;
            }
            None => {
                return Err(NmtError::ParamMissing { name: name.clone() });
            }
        }
    }

    let n_frozen = reader.u32()? as usize;
    let mut frozen = BTreeSet::new();
    for _ in 0..n_frozen {
        frozen.insert(reader.u32()? as usize);
    }
    model.frozen = frozen;
    Ok(Checkpoint {
        model,
        step,
        best_dev_metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmt::vocab::build_vocab;

    fn tiny_model() -> Seq2SeqModel {
        let sents: Vec<Vec<String>> = vec![vec!["a".into(), "b".into()]];
        let vocab = build_vocab(sents.iter().map(Vec::as_slice), 0);
        let config = NmtConfig {
            hidden: 8,
            embed: 8,
            enc_layers: 1,
            dec_layers: 1,
            dropout: 0.0,
            ..NmtConfig::default()
        };
        Seq2SeqModel::new(config, FusionConfig::none(), vocab.clone(), vocab).unwrap()
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let model = tiny_model();
        let checkpoint = Checkpoint {
            model,
            step: 42,
            best_dev_metric: 0.75,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&checkpoint, &path, Dtype::F64).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.step, 42);
        assert_eq!(loaded.best_dev_metric, 0.75);
        assert_eq!(loaded.model.params.tensors, checkpoint.model.params.tensors);
        assert_eq!(loaded.model.config, checkpoint.model.config);
        assert_eq!(
            loaded.model.src_vocab.tokens(),
            checkpoint.model.src_vocab.tokens()
        );
    }

    #[test]
    fn f32_round_trip_is_close() {
        let model = tiny_model();
        let checkpoint = Checkpoint {
            model,
            step: 1,
            best_dev_metric: 0.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model32.ckpt");
        save_checkpoint(&checkpoint, &path, Dtype::F32).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        for (a, b) in loaded
            .model
            .params
            .tensors
            .iter()
            .zip(&checkpoint.model.params.tensors)
        {
            for (x, y) in a.data.iter().zip(&b.data) {
                let denom = y.abs().max(1e-12);
                assert!((x - y).abs() / denom < 1e-6, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn version_and_magic_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTMAGIC....").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NmtError::Malformed { .. })
        ));

        let model = tiny_model();
        let checkpoint = Checkpoint {
            model,
            step: 0,
            best_dev_metric: 0.0,
        };
        let path2 = dir.path().join("v.ckpt");
        save_checkpoint(&checkpoint, &path2, Dtype::F64).unwrap();
        let mut bytes = std::fs::read(&path2).unwrap();
        bytes[8] = 99; // stamp a future version
        std::fs::write(&path2, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path2),
            Err(NmtError::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn missing_parameter_detected() {
        let model = tiny_model();
        let checkpoint = Checkpoint {
            model,
            step: 0,
            best_dev_metric: 0.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&checkpoint, &path, Dtype::F64).unwrap();
        // Rename one parameter record in place: "attn.wa" -> "attn.xx".
        let mut bytes = std::fs::read(&path).unwrap();
        let needle = b"attn.wa";
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        bytes[pos + 5] = b'x';
        bytes[pos + 6] = b'x';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NmtError::ParamMissing { name }) if name == "attn.wa"
        ));
    }
}

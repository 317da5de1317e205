//! Fusion of external contextual embeddings into the translation model:
//! initialize the encoder embedding matrix from a pretrained matrix,
//! concatenate per-token vectors to the encoder input or output, or give
//! the decoder a second attention over them.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::NmtError;
use crate::numerics::Tensor;

/// The four fusion wirings. Output-concat and output-attention touch the
/// same interface point and cannot be combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FusionMode {
    /// Copy pretrained rows into the encoder embedding for shared tokens.
    EmbedInit,
    /// Concatenate provider vectors to the encoder input embeddings,
    /// then project back down.
    InputConcat,
    /// Concatenate provider vectors to the encoder outputs, then project
    /// back down.
    OutputConcat,
    /// A second decoder attention over the provider vectors whose
    /// context joins the attentional vector.
    OutputAttention,
}

impl FusionMode {
    pub fn parse(s: &str) -> Option<FusionMode> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "embed_init" | "embed" | "1" => Some(FusionMode::EmbedInit),
            "input_concat" | "input" | "2" => Some(FusionMode::InputConcat),
            "output_concat" | "output" | "3" => Some(FusionMode::OutputConcat),
            "output_attention" | "attention" | "4" => Some(FusionMode::OutputAttention),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionMode::EmbedInit => "embed_init",
            FusionMode::InputConcat => "input_concat",
            FusionMode::OutputConcat => "output_concat",
            FusionMode::OutputAttention => "output_attention",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FusionConfig {
    pub modes: BTreeSet<FusionMode>,
    pub freeze_embeddings: bool,
    /// Width of the provider vectors (for every mode but EmbedInit).
    pub provider_dim: usize,
}

impl FusionConfig {
    pub fn none() -> FusionConfig {
        FusionConfig::default()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn has(&self, mode: FusionMode) -> bool {
        self.modes.contains(&mode)
    }

    /// Contextual vectors are needed for every mode except EmbedInit.
    pub fn needs_provider(&self) -> bool {
        self.modes.iter().any(|m| *m != FusionMode::EmbedInit)
    }

    pub fn validate(&self) -> Result<(), NmtError> {
        if self.has(FusionMode::OutputConcat) && self.has(FusionMode::OutputAttention) {
            return Err(NmtError::ModeConflict);
        }
        if self.needs_provider() && self.provider_dim == 0 {
            return Err(NmtError::InvalidConfig(
                "fusion with contextual vectors needs provider_dim > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-sentence token-aligned contextual vectors, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderData {
    pub dim: usize,
    pub sentences: Vec<Tensor>,
}

impl ProviderData {
    /// Vectors for sentence `id`, checked against the tokenized length.
    pub fn for_sentence(&self, id: usize, n_tokens: usize) -> Result<&Tensor, NmtError> {
        let rows = self
            .sentences
            .get(id)
            .ok_or(NmtError::ProviderMissing { id })?;
        if rows.rows() != n_tokens {
            return Err(NmtError::TokenCountMismatch {
                id,
                provider: rows.rows(),
                tokens: n_tokens,
            });
        }
        Ok(rows)
    }
}

/// Binary provider file: per sentence an ASCII header line
/// `id n_tokens dim`, then `n_tokens * dim` little-endian f32 values.
/// Sentence order must match the corpus file.
pub fn write_provider_file(path: &Path, data: &ProviderData) -> Result<(), NmtError> {
    let mut out = fs::File::create(path)?;
    for (id, rows) in data.sentences.iter().enumerate() {
        writeln!(out, "{} {} {}", id, rows.rows(), data.dim)?;
        let mut buf = Vec::with_capacity(rows.numel() * 4);
        for &v in &rows.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn load_provider_file(path: &Path) -> Result<ProviderData, NmtError> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let mut sentences = Vec::new();
    let mut dim = 0usize;
    let mut pos = 0usize;
    let malformed = |reason: String| NmtError::Malformed {
        what: "provider file",
        reason,
    };
    while pos < bytes.len() {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| malformed("truncated header".into()))?;
        let header = std::str::from_utf8(&bytes[pos..pos + nl])
            .map_err(|_| malformed("non-utf8 header".into()))?;
        pos += nl + 1;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(malformed(format!("bad header {header:?}")));
        }
        let id: usize = fields[0].parse().map_err(|_| malformed("bad id".into()))?;
        let n_tokens: usize = fields[1]
            .parse()
            .map_err(|_| malformed("bad token count".into()))?;
        let d: usize = fields[2].parse().map_err(|_| malformed("bad dim".into()))?;
        if id != sentences.len() {
            return Err(malformed(format!(
                "sentence ids out of order: expected {}, found {id}",
                sentences.len()
            )));
        }
        if dim == 0 {
            dim = d;
        } else if d != dim {
            return Err(malformed(format!("dim changed from {dim} to {d}")));
        }
        let n_bytes = n_tokens * d * 4;
        if pos + n_bytes > bytes.len() {
            return Err(malformed("truncated vector block".into()));
        }
        let mut data = Vec::with_capacity(n_tokens * d);
        for chunk in bytes[pos..pos + n_bytes].chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
        }
        pos += n_bytes;
        sentences.push(Tensor::new(vec![n_tokens, d], data));
    }
    Ok(ProviderData { dim, sentences })
}

/// Pretrained token-embedding matrix file: one line per token,
/// `token dim v1 v2 ... vdim`.
pub fn write_embedding_matrix(path: &Path, entries: &[(String, Vec<f64>)]) -> Result<(), NmtError> {
    let mut out = fs::File::create(path)?;
    for (token, values) in entries {
        let mut line = format!("{token} {}", values.len());
        for v in values {
            line.push(' ');
            line.push_str(&format!("{v}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn load_embedding_matrix(path: &Path) -> Result<HashMap<String, Vec<f64>>, NmtError> {
    let text = fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let malformed = |reason: String| NmtError::Malformed {
            what: "embedding matrix",
            reason: format!("line {}: {reason}", i + 1),
        };
        let token = fields
            .next()
            .ok_or_else(|| malformed("empty line".into()))?;
        let dim: usize = fields
            .next()
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| malformed("missing dim".into()))?;
        let values: Vec<f64> = fields
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| malformed("bad float".into()))?;
        if values.len() != dim {
            return Err(malformed(format!(
                "declared {dim} values, found {}",
                values.len()
            )));
        }
        map.insert(token.to_string(), values);
    }
    Ok(map)
}

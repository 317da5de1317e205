//! Model assembly: the named parameter registry, initialization for both
//! architectures, fusion wiring, and the pieces shared by training and
//! inference forwards.

use std::collections::{BTreeSet, HashMap};

use super::fusion::{FusionConfig, FusionMode};
use super::vocab::Vocabulary;
use super::{Arch, NmtConfig, NmtError};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::Rng;

/// Named parameter storage. Order is creation order and is the canonical
/// order for optimizer state and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    pub tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn add(&mut self, name: &str, tensor: Tensor) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name:?}"
        );
        let idx = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.tensors[self.index[name]]
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// A sequence-to-sequence model: configuration, vocabularies, named
/// parameters, and the fusion wiring.
#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    pub config: NmtConfig,
    pub fusion: FusionConfig,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub params: ParamSet,
    /// Parameter indices excluded from optimizer updates.
    pub frozen: BTreeSet<usize>,
}

impl Seq2SeqModel {
    /// Build and initialize a model. RNN weights start uniform(-0.1, 0.1);
    /// Transformer weights normal with std hidden^-0.5; norms and biases
    /// start at identity/zero.
    pub fn new(
        config: NmtConfig,
        fusion: FusionConfig,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
    ) -> Result<Seq2SeqModel, NmtError> {
        config.validate()?;
        fusion.validate()?;
        let mut rng = Rng::new(config.seed);
        let mut params = ParamSet::default();
        let h = config.hidden;
        let e = config.embed;
        let db = fusion.provider_dim;

        match config.arch {
            Arch::Rnn => {
                let u = |rng: &mut Rng, r, c| Tensor::uniform_init(rng, r, c, 0.1);
                params.add("src_embed", u(&mut rng, src_vocab.len(), e));
                params.add("tgt_embed", u(&mut rng, tgt_vocab.len(), e));
                for l in 0..config.enc_layers {
                    let in_dim = if l == 0 { e } else { h };
                    for dir in ["f", "b"] {
                        params.add(&format!("enc.{l}.{dir}.wx"), u(&mut rng, in_dim, 4 * h));
                        params.add(&format!("enc.{l}.{dir}.wh"), u(&mut rng, h, 4 * h));
                        params.add(&format!("enc.{l}.{dir}.b"), Tensor::zeros(1, 4 * h));
                    }
                }
                for l in 0..config.dec_layers {
                    let in_dim = if l == 0 { e } else { h };
                    params.add(&format!("dec.{l}.wx"), u(&mut rng, in_dim, 4 * h));
                    params.add(&format!("dec.{l}.wh"), u(&mut rng, h, 4 * h));
                    params.add(&format!("dec.{l}.b"), Tensor::zeros(1, 4 * h));
                }
                params.add("attn.wa", u(&mut rng, h, h));
                let wc_in = 2 * h
                    + if fusion.has(FusionMode::OutputAttention) {
                        db
                    } else {
                        0
                    };
                params.add("attn.wc", u(&mut rng, wc_in, h));
                if fusion.has(FusionMode::OutputAttention) {
                    params.add("fuse4.wa", u(&mut rng, h, db));
                }
                if !config.tied_decoder_embeddings {
                    params.add("out.w", u(&mut rng, h, tgt_vocab.len()));
                }
                params.add("out.b", Tensor::zeros(1, tgt_vocab.len()));
                if fusion.has(FusionMode::InputConcat) {
                    params.add("fuse2.w", u(&mut rng, e + db, e));
                    params.add("fuse2.b", Tensor::zeros(1, e));
                }
                if fusion.has(FusionMode::OutputConcat) {
                    params.add("fuse3.w", u(&mut rng, h + db, h));
                    params.add("fuse3.b", Tensor::zeros(1, h));
                }
            }
            Arch::Transformer => {
                let std = (h as f64).powf(-0.5);
                let n = |rng: &mut Rng, r, c| Tensor::normal_init(rng, r, c, std);
                params.add("src_embed", n(&mut rng, src_vocab.len(), e));
                params.add("tgt_embed", n(&mut rng, tgt_vocab.len(), e));
                let f = config.ffn_size();
                let block = |params: &mut ParamSet, rng: &mut Rng, prefix: String| {
                    params.add(&format!("{prefix}.ln1.g"), Tensor::filled(1, h, 1.0));
                    params.add(&format!("{prefix}.ln1.b"), Tensor::zeros(1, h));
                    for w in ["wq", "wk", "wv", "wo"] {
                        params.add(&format!("{prefix}.attn.{w}"), n(rng, h, h));
                    }
                };
                for l in 0..config.enc_layers {
                    block(&mut params, &mut rng, format!("enc.{l}"));
                    params.add(&format!("enc.{l}.ln2.g"), Tensor::filled(1, h, 1.0));
                    params.add(&format!("enc.{l}.ln2.b"), Tensor::zeros(1, h));
                    params.add(&format!("enc.{l}.ffn.w1"), n(&mut rng, h, f));
                    params.add(&format!("enc.{l}.ffn.b1"), Tensor::zeros(1, f));
                    params.add(&format!("enc.{l}.ffn.w2"), n(&mut rng, f, h));
                    params.add(&format!("enc.{l}.ffn.b2"), Tensor::zeros(1, h));
                }
                params.add("enc.ln_final.g", Tensor::filled(1, h, 1.0));
                params.add("enc.ln_final.b", Tensor::zeros(1, h));
                for l in 0..config.dec_layers {
                    block(&mut params, &mut rng, format!("dec.{l}"));
                    params.add(&format!("dec.{l}.ln2.g"), Tensor::filled(1, h, 1.0));
                    params.add(&format!("dec.{l}.ln2.b"), Tensor::zeros(1, h));
                    for w in ["wq", "wk", "wv", "wo"] {
                        params.add(&format!("dec.{l}.cross.{w}"), n(&mut rng, h, h));
                    }
                    if fusion.has(FusionMode::OutputAttention) {
                        params.add(&format!("dec.{l}.lnb.g"), Tensor::filled(1, h, 1.0));
                        params.add(&format!("dec.{l}.lnb.b"), Tensor::zeros(1, h));
                        params.add(&format!("dec.{l}.battn.wq"), n(&mut rng, h, h));
                        params.add(&format!("dec.{l}.battn.wk"), n(&mut rng, db, h));
                        params.add(&format!("dec.{l}.battn.wv"), n(&mut rng, db, h));
                        params.add(&format!("dec.{l}.battn.wo"), n(&mut rng, h, h));
                    }
                    params.add(&format!("dec.{l}.ln3.g"), Tensor::filled(1, h, 1.0));
                    params.add(&format!("dec.{l}.ln3.b"), Tensor::zeros(1, h));
                    params.add(&format!("dec.{l}.ffn.w1"), n(&mut rng, h, f));
                    params.add(&format!("dec.{l}.ffn.b1"), Tensor::zeros(1, f));
                    params.add(&format!("dec.{l}.ffn.w2"), n(&mut rng, f, h));
                    params.add(&format!("dec.{l}.ffn.b2"), Tensor::zeros(1, h));
                }
                params.add("dec.ln_final.g", Tensor::filled(1, h, 1.0));
                params.add("dec.ln_final.b", Tensor::zeros(1, h));
                if !config.tied_decoder_embeddings {
                    params.add("out.w", n(&mut rng, h, tgt_vocab.len()));
                }
                params.add("out.b", Tensor::zeros(1, tgt_vocab.len()));
                if fusion.has(FusionMode::InputConcat) {
                    params.add("fuse2.w", n(&mut rng, e + db, e));
                    params.add("fuse2.b", Tensor::zeros(1, e));
                }
                if fusion.has(FusionMode::OutputConcat) {
                    params.add("fuse3.w", n(&mut rng, h + db, h));
                    params.add("fuse3.b", Tensor::zeros(1, h));
                }
            }
        }

        Ok(Seq2SeqModel {
            config,
            fusion,
            src_vocab,
            tgt_vocab,
            params,
            frozen: BTreeSet::new(),
        })
    }

    /// Copy pretrained rows into the encoder embedding for every token
    /// both sides know (fusion mode EmbedInit), optionally freezing the
    /// matrix. Returns how many rows were initialized.
    pub fn init_encoder_embeddings(
        &mut self,
        pretrained: &HashMap<String, Vec<f64>>,
        freeze: bool,
    ) -> Result<usize, NmtError> {
        let e = self.config.embed;
        let mut copied = 0;
        let vocab = self.src_vocab.clone();
        let embed = self.params.get_mut("src_embed");
        for (token, values) in pretrained {
            if !vocab.contains(token) {
                continue;
            }
            if values.len() != e {
                return Err(NmtError::ShapeMismatch(format!(
                    "pretrained vector for {token:?} has dim {}, embedding dim is {e}",
                    values.len()
                )));
            }
            let id = vocab.id(token) as usize;
            embed.data[id * e..(id + 1) * e].copy_from_slice(values);
            copied += 1;
        }
        if freeze {
            let idx = self.params.position("src_embed").unwrap();
            self.frozen.insert(idx);
        }
        Ok(copied)
    }
}

/// Parameters bound into a tape as leaves for one forward/backward pass.
pub struct BoundParams {
    pub vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn bind(model: &Seq2SeqModel, tape: &mut Tape) -> BoundParams {
        let vars = model
            .params
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        BoundParams {
            vars,
            index: model
                .params
                .names()
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i))
                .collect(),
        }
    }

    /// View over leaves that something else (the gradient checker)
    /// already pushed, in parameter order.
    pub fn from_vars(model: &Seq2SeqModel, vars: &[Var]) -> BoundParams {
        assert_eq!(vars.len(), model.params.len());
        BoundParams {
            vars: vars.to_vec(),
            index: model
                .params
                .names()
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i))
                .collect(),
        }
    }

    pub fn var(&self, name: &str) -> Var {
        self.vars[self.index[name]]
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }
}

/// One LSTM cell step over a batch row block. Gate packing along the
/// 4H axis is input, forget, candidate, output.
#[allow(clippy::too_many_arguments)]
pub fn lstm_step(
    tape: &mut Tape,
    x: Var,
    h: Var,
    c: Var,
    wx: Var,
    wh: Var,
    bias: Var,
    hidden: usize,
) -> (Var, Var) {
    let from_x = tape.matmul(x, wx);
    let from_h = tape.matmul(h, wh);
    let pre = tape.add(from_x, from_h);
    let gates = tape.add(pre, bias);
    let rows = tape.value(gates).rows();
    let i = tape.slice(gates, 0, rows, 0, hidden);
    let f = tape.slice(gates, 0, rows, hidden, 2 * hidden);
    let g = tape.slice(gates, 0, rows, 2 * hidden, 3 * hidden);
    let o = tape.slice(gates, 0, rows, 3 * hidden, 4 * hidden);
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_new = tape.add(fc, ig);
    let c_tanh = tape.tanh(c_new);
    let h_new = tape.mul(o, c_tanh);
    (h_new, c_new)
}

/// Blend a state update with its previous value under a `[B, 1]` mask:
/// masked rows keep the old state, unmasked rows take the new one.
pub fn masked_update(tape: &mut Tape, new: Var, old: Var, mask: Var, inv_mask: Var) -> Var {
    let keep_new = tape.mul(new, mask);
    let keep_old = tape.mul(old, inv_mask);
    tape.add(keep_new, keep_old)
}

/// Output logits: tied models project through the transpose of the
/// decoder embedding; untied models have their own matrix.
pub fn output_logits(tape: &mut Tape, bound: &BoundParams, tied: bool, h: Var) -> Var {
    let projected = if tied {
        let embed_t = tape.transpose(bound.var("tgt_embed"));
        tape.matmul(h, embed_t)
    } else {
        tape.matmul(h, bound.var("out.w"))
    };
    tape.add(projected, bound.var("out.b"))
}

/// Sinusoidal position encodings for `positions`, width `dim`.
pub fn positional_encoding(positions: &[usize], dim: usize) -> Tensor {
    let mut out = Tensor::zeros(positions.len(), dim);
    for (row, &pos) in positions.iter().enumerate() {
        for i in 0..dim {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            out.set(row, i, v);
        }
    }
    out
}

pub const MASK_NEG: f64 = -1e30;

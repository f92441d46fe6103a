//! Transformer encoder and encoder–decoder stacks in three variants.
//!
//! * [`Variant::Real`]: the ordinary real-valued transformer.
//! * [`Variant::Partial`]: every attention projection (query, key, value,
//!   output; self- and cross-attention) is a quaternion layer, feed-forward
//!   sublayers stay real.
//! * [`Variant::Full`]: feed-forward sublayers are quaternion as well.
//!
//! Quaternion attention scores each head with `Q ⊗ Kᵀ / √d_k`, normalizes
//! the four component score matrices independently, and weights the values
//! per component. Residuals, layer normalization, and positional encodings
//! act on the concatenated real vector `[r | x | y | z]`.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::autodiff::{AttentionMask, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{
    quaternion_to_real, real_to_quaternion, Binding, Dense, InitScheme, InitSpec, Initializer,
    Linear, ParamCount, ParamId, ParamRole, ParamStore,
};
use crate::qtensor::QTensor;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Real,
    Partial,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Real, Variant::Partial, Variant::Full];

    pub fn quaternion_attention(self) -> bool {
        self != Variant::Real
    }

    pub fn quaternion_ffn(self) -> bool {
        self == Variant::Full
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" | "real-baseline" => Ok(Variant::Real),
            "partial" | "q-partial" => Ok(Variant::Partial),
            "full" | "q-full" => Ok(Variant::Full),
            other => Err(Error::config(
                "variant",
                format!("`{other}` is not one of real, partial, full"),
            )),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Real => "real",
            Variant::Partial => "partial",
            Variant::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformerConfig {
    pub variant: Variant,
    /// Blocks in the encoder, and in the decoder when there is one.
    pub layers: usize,
    /// Quaternion model width; the real width is `4·d_q`.
    pub d_q: usize,
    pub heads: usize,
    /// Hidden width of the feed-forward sublayers in real units.
    pub ffn_hidden: usize,
    pub vocab: usize,
    pub max_len: usize,
    pub seed: u64,
    pub init: InitScheme,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            variant: Variant::Full,
            layers: 2,
            d_q: 16,
            heads: 2,
            ffn_hidden: 128,
            vocab: 32,
            max_len: 32,
            seed: 1,
            init: InitScheme::GlorotPerComponent,
        }
    }
}

impl TransformerConfig {
    pub fn d_model(&self) -> usize {
        4 * self.d_q
    }

    /// Per-head key width in real units.
    pub fn d_k(&self) -> usize {
        self.d_model() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("layers", self.layers),
            ("d_q", self.d_q),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
            ("vocab", self.vocab),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !self.d_q.is_multiple_of(self.heads) {
            return Err(Error::config(
                "heads",
                format!("{} heads do not divide d_q = {}", self.heads, self.d_q),
            ));
        }
        if !self.ffn_hidden.is_multiple_of(4) {
            return Err(Error::config("ffn_hidden", "must be a multiple of 4"));
        }
        Ok(())
    }
}

/// Padded batch of token sequences, row-major `batch × len`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub batch: usize,
    pub len: usize,
    pub ids: Vec<usize>,
    pub valid: Vec<bool>,
}

impl SeqBatch {
    pub fn new<S: AsRef<[usize]>>(seqs: &[S], pad: usize) -> Self {
        let len = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut valid = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            let s = s.as_ref();
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(pad, len - s.len()));
            valid.extend((0..len).map(|i| i < s.len()));
        }
        SeqBatch {
            batch: seqs.len(),
            len,
            ids,
            valid,
        }
    }

    pub fn rows(&self) -> usize {
        self.batch * self.len
    }

    fn all_valid(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }
}

/// Sinusoidal encodings `[len × width]`: `sin` on even columns, `cos` on odd.
pub fn positional_encoding(len: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; len * width];
    for pos in 0..len {
        for i in 0..width {
            let freq = 10000f64.powf((2 * (i / 2)) as f64 / width as f64);
            let a = pos as f64 / freq;
            data[pos * width + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::matrix(len, width, data).expect("positional shape")
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gain = store.add(
            format!("{name}.gain"),
            ParamRole::Norm,
            Tensor::full(&[width], 1.0),
        );
        let bias = store.add(
            format!("{name}.bias"),
            ParamRole::Norm,
            Tensor::zeros(&[width]),
        );
        LayerNorm { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Binding, x: Var) -> Result<Var> {
        tape.layer_norm(
            x,
            params.var(self.gain),
            params.var(self.bias),
            LAYER_NORM_EPS,
        )
    }
}

/// Multi-head attention with bias-free projections.
#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: Dense,
    pub wk: Dense,
    pub wv: Dense,
    pub wo: Dense,
    pub quaternion: bool,
    pub d_q: usize,
    pub heads: usize,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &TransformerConfig,
        init: &mut Initializer,
    ) -> Self {
        let q = cfg.variant.quaternion_attention();
        let d = cfg.d_q;
        let mut proj = |p: &str| Dense::new(store, &format!("{name}.{p}"), d, d, false, q, init);
        let (wq, wk, wv, wo) = (proj("wq"), proj("wk"), proj("wv"), proj("wo"));
        Attention {
            wq,
            wk,
            wv,
            wo,
            quaternion: q,
            d_q: d,
            heads: cfg.heads,
        }
    }

    /// Per-head key width in real units.
    pub fn d_k(&self) -> usize {
        4 * self.d_q / self.heads
    }

    /// `xq` is `batch·ℓq × 4d_q`, `xkv` is `batch·ℓk × 4d_q`. Attention weights
    /// of every head are appended to `weights`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Binding,
        xq: Var,
        xkv: Var,
        batch: usize,
        mask: &AttentionMask,
        weights: &mut Vec<Var>,
    ) -> Result<Var> {
        let q = self.wq.forward(tape, params, xq)?;
        let k = self.wk.forward(tape, params, xkv)?;
        let v = self.wv.forward(tape, params, xkv)?;
        let scale = 1.0 / (self.d_k() as f64).sqrt();
        let dh = self.d_q / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else if self.quaternion {
                let cols: Vec<usize> = (0..4)
                    .flat_map(|c| (0..dh).map(move |t| c * self.d_q + h * dh + t))
                    .collect();
                (
                    tape.gather_cols(q, &cols)?,
                    tape.gather_cols(k, &cols)?,
                    tape.gather_cols(v, &cols)?,
                )
            } else {
                let w = 4 * dh;
                (
                    tape.slice_cols(q, h * w, w)?,
                    tape.slice_cols(k, h * w, w)?,
                    tape.slice_cols(v, h * w, w)?,
                )
            };
            let out = if self.quaternion {
                let s = tape.hamilton_scores(qh, kh, batch)?;
                let s = tape.scale(s, scale)?;
                let a = tape.component_softmax(s, Some(mask))?;
                weights.push(a);
                tape.component_product(a, vh, batch, 4)?
            } else {
                let s = tape.batched_matmul_nt(qh, kh, batch)?;
                let s = tape.scale(s, scale)?;
                let a = tape.softmax_rows(s, Some(mask))?;
                weights.push(a);
                tape.batched_matmul(a, vh, batch)?
            };
            outs.push(out);
        }
        let joined = match (outs.len(), self.quaternion) {
            (1, _) => outs[0],
            (_, true) => tape.qconcat(&outs)?,
            (_, false) => tape.concat(&outs, 1)?,
        };
        self.wo.forward(tape, params, joined)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Dense,
    pub outer: Dense,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &TransformerConfig,
        init: &mut Initializer,
    ) -> Self {
        let q = cfg.variant.quaternion_ffn();
        let hidden_q = cfg.ffn_hidden / 4;
        let inner = Dense::new(
            store,
            &format!("{name}.inner"),
            cfg.d_q,
            hidden_q,
            true,
            q,
            init,
        );
        let outer = Dense::new(
            store,
            &format!("{name}.outer"),
            hidden_q,
            cfg.d_q,
            true,
            q,
            init,
        );
        FeedForward { inner, outer }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Binding, x: Var) -> Result<Var> {
        let h = self.inner.forward(tape, params, x)?;
        let h = tape.relu(h)?;
        self.outer.forward(tape, params, h)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub attn: Attention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &TransformerConfig,
        init: &mut Initializer,
    ) -> Self {
        let attn = Attention::new(store, &format!("{name}.attn"), cfg, init);
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), cfg.d_model());
        let ffn = FeedForward::new(store, &format!("{name}.ffn"), cfg, init);
        let norm2 = LayerNorm::new(store, &format!("{name}.norm2"), cfg.d_model());
        EncoderBlock {
            attn,
            norm1,
            ffn,
            norm2,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Binding,
        x: Var,
        batch: usize,
        mask: &AttentionMask,
        weights: &mut Vec<Var>,
    ) -> Result<Var> {
        let a = self
            .attn
            .forward(tape, params, x, x, batch, mask, weights)?;
        let x = tape.add(x, a)?;
        let x = self.norm1.forward(tape, params, x)?;
        let f = self.ffn.forward(tape, params, x)?;
        let x = tape.add(x, f)?;
        self.norm2.forward(tape, params, x)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub cross_attn: Attention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &TransformerConfig,
        init: &mut Initializer,
    ) -> Self {
        let self_attn = Attention::new(store, &format!("{name}.self_attn"), cfg, init);
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), cfg.d_model());
        let cross_attn = Attention::new(store, &format!("{name}.cross_attn"), cfg, init);
        let norm2 = LayerNorm::new(store, &format!("{name}.norm2"), cfg.d_model());
        let ffn = FeedForward::new(store, &format!("{name}.ffn"), cfg, init);
        let norm3 = LayerNorm::new(store, &format!("{name}.norm3"), cfg.d_model());
        DecoderBlock {
            self_attn,
            norm1,
            cross_attn,
            norm2,
            ffn,
            norm3,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Binding,
        x: Var,
        memory: Var,
        batch: usize,
        self_mask: &AttentionMask,
        cross_mask: &AttentionMask,
        weights: &mut Vec<Var>,
    ) -> Result<Var> {
        let a = self
            .self_attn
            .forward(tape, params, x, x, batch, self_mask, weights)?;
        let x = tape.add(x, a)?;
        let x = self.norm1.forward(tape, params, x)?;
        let c = self
            .cross_attn
            .forward(tape, params, x, memory, batch, cross_mask, weights)?;
        let x = tape.add(x, c)?;
        let x = self.norm2.forward(tape, params, x)?;
        let f = self.ffn.forward(tape, params, x)?;
        let x = tape.add(x, f)?;
        self.norm3.forward(tape, params, x)
    }
}

/// Either an encoder–decoder over a shared vocabulary or an encoder with a
/// mean-pooled classification head.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub config: TransformerConfig,
    pub params: ParamStore,
    pub embed: ParamId,
    pub encoder: Vec<EncoderBlock>,
    pub decoder: Vec<DecoderBlock>,
    /// Real projection to the vocabulary, or to the classes of a classifier.
    pub output: Linear,
}

impl Transformer {
    pub fn seq2seq(config: TransformerConfig) -> Result<Self> {
        let outputs = config.vocab;
        Self::build(config, true, outputs)
    }

    pub fn classifier(config: TransformerConfig, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::config("num_classes", "must be at least 1"));
        }
        Self::build(config, false, num_classes)
    }

    fn build(config: TransformerConfig, with_decoder: bool, outputs: usize) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = InitSpec::new(config.init, config.seed).initializer();
        let width = config.d_model();
        let embed = params.add(
            "embed.table",
            ParamRole::Embedding,
            init.embedding(config.vocab, width),
        );
        let encoder = (0..config.layers)
            .map(|i| EncoderBlock::new(&mut params, &format!("encoder.{i}"), &config, &mut init))
            .collect();
        let decoder = if with_decoder {
            (0..config.layers)
                .map(|i| {
                    DecoderBlock::new(&mut params, &format!("decoder.{i}"), &config, &mut init)
                })
                .collect()
        } else {
            Vec::new()
        };
        let output = Linear::new(
            &mut params,
            "output",
            width,
            outputs,
            true,
            ParamRole::Head,
            &mut init,
        );
        Ok(Transformer {
            config,
            params,
            embed,
            encoder,
            decoder,
            output,
        })
    }

    pub fn is_seq2seq(&self) -> bool {
        !self.decoder.is_empty()
    }

    pub fn param_count(&self) -> ParamCount {
        self.params.count()
    }

    fn check_batch(&self, b: &SeqBatch) -> Result<()> {
        if b.len > self.config.max_len {
            return Err(Error::Contract(format!(
                "sequence length {} exceeds max_len {}",
                b.len, self.config.max_len
            )));
        }
        if let Some(&bad) = b.ids.iter().find(|&&i| i >= self.config.vocab) {
            return Err(Error::Contract(format!(
                "token {bad} outside a vocabulary of {}",
                self.config.vocab
            )));
        }
        if b.batch == 0 || b.len == 0 {
            return Err(Error::Contract("empty batch or empty sequences".into()));
        }
        Ok(())
    }

    /// Scaled embeddings plus positions, `batch·len × 4d_q`.
    fn embed_batch(&self, tape: &mut Tape, params: &Binding, b: &SeqBatch) -> Result<Var> {
        let width = self.config.d_model();
        let rows = tape.gather_rows(params.var(self.embed), &b.ids)?;
        let rows = tape.scale(rows, (width as f64).sqrt())?;
        let pe = positional_encoding(b.len, width);
        let mut data = Vec::with_capacity(b.rows() * width);
        for _ in 0..b.batch {
            data.extend_from_slice(pe.data());
        }
        let pe = tape.constant(Tensor::matrix(b.rows(), width, data)?);
        tape.add(rows, pe)
    }

    fn key_mask(b: &SeqBatch, q_len: usize, causal: bool) -> AttentionMask {
        AttentionMask {
            batch: b.batch,
            q_len,
            k_len: b.len,
            causal,
            key_valid: (!b.all_valid()).then(|| b.valid.clone()),
        }
    }

    /// Encoder output `batch·len × 4d_q`; attention weights of every layer
    /// and head are appended to `weights`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &Binding,
        src: &SeqBatch,
        weights: &mut Vec<Var>,
    ) -> Result<Var> {
        self.check_batch(src)?;
        let mask = Self::key_mask(src, src.len, false);
        let mut x = self.embed_batch(tape, params, src)?;
        for block in &self.encoder {
            x = block.forward(tape, params, x, src.batch, &mask, weights)?;
        }
        Ok(x)
    }

    /// Decoder logits `batch·ℓt × vocab` for teacher-forced inputs `tgt`.
    pub fn decode(
        &self,
        tape: &mut Tape,
        params: &Binding,
        memory: Var,
        src: &SeqBatch,
        tgt: &SeqBatch,
        weights: &mut Vec<Var>,
    ) -> Result<Var> {
        if !self.is_seq2seq() {
            return Err(Error::Contract("model has no decoder".into()));
        }
        self.check_batch(tgt)?;
        if tgt.batch != src.batch {
            return Err(Error::shape(format!(
                "{} targets for {} sources",
                tgt.batch, src.batch
            )));
        }
        let self_mask = Self::key_mask(tgt, tgt.len, true);
        let cross_mask = Self::key_mask(src, tgt.len, false);
        let mut x = self.embed_batch(tape, params, tgt)?;
        for block in &self.decoder {
            x = block.forward(
                tape,
                params,
                x,
                memory,
                src.batch,
                &self_mask,
                &cross_mask,
                weights,
            )?;
        }
        self.output.forward(tape, params, x)
    }

    /// Logits and mean token cross-entropy; `tgt_out` holds one entry per
    /// row of `tgt_in`, `None` for padding.
    pub fn seq2seq_loss(
        &self,
        tape: &mut Tape,
        params: &Binding,
        src: &SeqBatch,
        tgt_in: &SeqBatch,
        tgt_out: &[Option<usize>],
    ) -> Result<(Var, Var)> {
        let mut sink = Vec::new();
        let memory = self.encode(tape, params, src, &mut sink)?;
        let logits = self.decode(tape, params, memory, src, tgt_in, &mut sink)?;
        let loss = tape.cross_entropy(logits, tgt_out)?;
        Ok((logits, loss))
    }

    /// Class logits `batch × classes` from the mean of valid encoder rows.
    pub fn classify(&self, tape: &mut Tape, params: &Binding, src: &SeqBatch) -> Result<Var> {
        if self.is_seq2seq() {
            return Err(Error::Contract("model is not a classifier".into()));
        }
        let h = self.encode(tape, params, src, &mut Vec::new())?;
        let mut pool = vec![0.0; src.batch * src.rows()];
        for b in 0..src.batch {
            let valid = &src.valid[b * src.len..(b + 1) * src.len];
            let n = valid.iter().filter(|v| **v).count().max(1) as f64;
            for (i, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
                pool[b * src.rows() + b * src.len + i] = 1.0 / n;
            }
        }
        let pool = tape.constant(Tensor::matrix(src.batch, src.rows(), pool)?);
        let pooled = tape.matmul(pool, h)?;
        self.output.forward(tape, params, pooled)
    }

    /// Greedy decoding of each source, starting from `bos` and stopping at
    /// `eos` or after `max_steps` tokens. Returned sequences exclude `bos`
    /// and `eos`.
    pub fn greedy_decode<S: AsRef<[usize]>>(
        &self,
        sources: &[S],
        bos: usize,
        eos: usize,
        pad: usize,
        max_steps: usize,
    ) -> Result<Vec<Vec<usize>>> {
        if sources.iter().any(|s| s.as_ref().is_empty()) {
            return Err(Error::Contract("empty source sequence".into()));
        }
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        let steps = max_steps.min(self.config.max_len.saturating_sub(1));
        let src = SeqBatch::new(sources, pad);
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape);
        let memory = self.encode(&mut tape, &params, &src, &mut Vec::new())?;
        let mut prefixes: Vec<Vec<usize>> = vec![vec![bos]; sources.len()];
        let mut done = vec![false; sources.len()];
        for _ in 0..steps {
            let tgt = SeqBatch::new(&prefixes, pad);
            let logits = self.decode(&mut tape, &params, memory, &src, &tgt, &mut Vec::new())?;
            let value = tape.value(logits);
            for (b, prefix) in prefixes.iter_mut().enumerate() {
                let row = value.row(b * tgt.len + tgt.len - 1);
                let next = if done[b] { pad } else { argmax(row) };
                done[b] |= next == eos;
                prefix.push(next);
            }
            if done.iter().all(|d| *d) {
                break;
            }
        }
        Ok(prefixes
            .into_iter()
            .map(|p| {
                p.into_iter()
                    .skip(1)
                    .take_while(|&t| t != eos && t != pad)
                    .collect()
            })
            .collect())
    }

    /// Attention weights of every encoder layer and head for one sequence.
    pub fn encoder_attention(&self, ids: &[usize]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape);
        let mut weights = Vec::new();
        self.encode(&mut tape, &params, &SeqBatch::new(&[ids], 0), &mut weights)?;
        Ok(weights.into_iter().map(|w| tape.value(w).clone()).collect())
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Four `ℓq × ℓk` attention matrices, one per component.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub comps: [Tensor; 4],
}

impl AttentionWeights {
    fn from_blocks(t: &Tensor) -> Self {
        let (rows, w) = t.dims2();
        let k = w / 4;
        AttentionWeights {
            comps: std::array::from_fn(|c| {
                let data = (0..rows)
                    .flat_map(|i| t.row(i)[c * k..(c + 1) * k].to_vec())
                    .collect();
                Tensor::matrix(rows, k, data).expect("weights shape")
            }),
        }
    }
}

/// Scaled quaternion scores `(Q ⊗ Kᵀ) / √d_k`, `ℓq × ℓk`.
pub fn q_attention_scores(q: &QTensor, k: &QTensor, d_k: usize) -> Result<QTensor> {
    let mut tape = Tape::new();
    let qv = tape.constant(quaternion_to_real(q)?);
    let kv = tape.constant(quaternion_to_real(k)?);
    let s = tape.hamilton_scores(qv, kv, 1)?;
    let s = tape.scale(s, 1.0 / (d_k as f64).sqrt())?;
    real_to_quaternion(tape.value(s))
}

/// Single-head quaternion attention over unprojected `Q`, `K`, `V`.
pub fn q_self_attention(
    q: &QTensor,
    k: &QTensor,
    v: &QTensor,
    d_k: usize,
    causal: bool,
) -> Result<(QTensor, AttentionWeights)> {
    let (lq, lk) = (q.dims2().0, k.dims2().0);
    if v.dims2().0 != lk {
        return Err(Error::shape(format!(
            "{} values for {lk} keys",
            v.dims2().0
        )));
    }
    if causal && lq != lk {
        return Err(Error::shape(
            "causal attention needs equal query and key lengths",
        ));
    }
    let mut tape = Tape::new();
    let qv = tape.constant(quaternion_to_real(q)?);
    let kv = tape.constant(quaternion_to_real(k)?);
    let vv = tape.constant(quaternion_to_real(v)?);
    let s = tape.hamilton_scores(qv, kv, 1)?;
    let s = tape.scale(s, 1.0 / (d_k as f64).sqrt())?;
    let mask = AttentionMask {
        batch: 1,
        q_len: lq,
        k_len: lk,
        causal,
        key_valid: None,
    };
    let a = tape.component_softmax(s, Some(&mask))?;
    let out = tape.component_product(a, vv, 1, 4)?;
    Ok((
        real_to_quaternion(tape.value(out))?,
        AttentionWeights::from_blocks(tape.value(a)),
    ))
}

/// Parameter counts of the three variants at the dimensions of `config`.
pub fn variant_counts(
    config: &TransformerConfig,
    seq2seq: bool,
    num_classes: usize,
) -> Result<Vec<(Variant, ParamCount)>> {
    Variant::ALL
        .iter()
        .map(|&variant| {
            let cfg = TransformerConfig {
                variant,
                ..config.clone()
            };
            let model = if seq2seq {
                Transformer::seq2seq(cfg)?
            } else {
                Transformer::classifier(cfg, num_classes)?
            };
            Ok((variant, model.param_count()))
        })
        .collect()
}

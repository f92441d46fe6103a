//! Training harness: datasets, models, the Adam loop, metrics, reports and
//! run directories.

mod config;
mod report;

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

pub use config::{ModelKind, TaskKind, TrainConfig, BATCH_SIZES, LEARNING_RATES};
pub use report::{
    param_report, CurvePoint, LayerRow, ParamReport, ParamSummary, RunReport, VariantRow,
};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{checkpoint, Binding, ParamStore};
use crate::optim::{clip_global_norm, Adam};
use crate::qatt::{AttKind, QAtt, QAttConfig};
use crate::rng::SplitMix;
use crate::tasks::arithmetic::{self, ArithmeticConfig, Charset, TransductionExample};
use crate::tasks::exact_match;
use crate::tasks::pairwise::{self, PairExample, PairwiseConfig};
use crate::tasks::sva::{self, SvaConfig, SvaExample};
use crate::transformer::{argmax, SeqBatch, Transformer, TransformerConfig, Variant};

/// Examples of one split.
#[derive(Debug, Clone, PartialEq)]
pub enum Examples {
    Pairs(Vec<PairExample>),
    Transduction(Vec<TransductionExample>),
    Sva(Vec<SvaExample>),
}

impl Examples {
    pub fn len(&self) -> usize {
        match self {
            Examples::Pairs(v) => v.len(),
            Examples::Transduction(v) => v.len(),
            Examples::Sva(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_tsv(&self) -> String {
        match self {
            Examples::Pairs(v) => pairwise::to_tsv(v),
            Examples::Transduction(v) => arithmetic::to_tsv(v),
            Examples::Sva(v) => sva::to_tsv(v),
        }
    }

    /// Identity of an example's input, used to keep splits disjoint.
    fn key(&self, i: usize) -> String {
        match self {
            Examples::Pairs(v) => format!("{:?}|{:?}", v[i].seq_a, v[i].seq_b),
            Examples::Transduction(v) => v[i].source.clone(),
            Examples::Sva(v) => v[i].sentence(),
        }
    }

    fn append(&mut self, other: Examples, keep: impl Fn(&Examples, usize) -> bool, limit: usize) {
        macro_rules! take {
            ($dst:expr, $src:expr, $wrap:path) => {{
                let wrapped = $wrap($src);
                if let $wrap(src) = &wrapped {
                    for (i, e) in src.iter().enumerate() {
                        if $dst.len() < limit && keep(&wrapped, i) {
                            $dst.push(e.clone());
                        }
                    }
                }
            }};
        }
        match (self, other) {
            (Examples::Pairs(d), Examples::Pairs(s)) => take!(d, s, Examples::Pairs),
            (Examples::Transduction(d), Examples::Transduction(s)) => {
                take!(d, s, Examples::Transduction)
            }
            (Examples::Sva(d), Examples::Sva(s)) => take!(d, s, Examples::Sva),
            _ => unreachable!("splits of one task share a kind"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Examples,
    pub val: Examples,
}

fn generate(cfg: &TrainConfig, n: usize, seed: u64) -> Result<Examples> {
    Ok(match cfg.task {
        TaskKind::Pairwise => Examples::Pairs(
            PairwiseConfig {
                n,
                vocab: cfg.vocab,
                min_len: cfg.seq_min,
                max_len: cfg.seq_max,
                verbatim: cfg.verbatim,
                seed,
            }
            .generate()?,
        ),
        TaskKind::Arithmetic => Examples::Transduction(
            ArithmeticConfig {
                n,
                min_digits: cfg.min_digits,
                max_digits: cfg.max_digits,
                ops: cfg.ops.clone(),
                allow_negative: cfg.allow_negative,
                seed,
            }
            .generate()?,
        ),
        TaskKind::Sva => Examples::Sva(
            SvaConfig {
                n,
                depth: cfg.depth,
                seed,
            }
            .generate()?,
        ),
    })
}

impl Dataset {
    /// Training split from `seed`; a validation split whose inputs never
    /// occur in the training split, drawn from derived seeds.
    pub fn generate(cfg: &TrainConfig) -> Result<Self> {
        let train = generate(cfg, cfg.n_train, cfg.seed)?;
        if cfg.eval_on_train {
            return Ok(Dataset {
                val: train.clone(),
                train,
            });
        }
        let seen: HashSet<String> = (0..train.len()).map(|i| train.key(i)).collect();
        let mut val = match &train {
            Examples::Pairs(_) => Examples::Pairs(Vec::new()),
            Examples::Transduction(_) => Examples::Transduction(Vec::new()),
            Examples::Sva(_) => Examples::Sva(Vec::new()),
        };
        let mut stream = 1;
        while val.len() < cfg.n_val {
            if stream > 64 {
                return Err(Error::config(
                    "n_val",
                    "not enough distinct examples outside the training split",
                ));
            }
            let seed = SplitMix::derive(cfg.seed, stream).next_u64();
            let chunk = generate(cfg, cfg.n_val, seed)?;
            val.append(chunk, |ex, i| !seen.contains(&ex.key(i)), cfg.n_val);
            stream += 1;
        }
        Ok(Dataset { train, val })
    }
}

/// Either model family behind one interface.
#[derive(Debug, Clone)]
pub enum Model {
    Qatt(QAtt),
    Transformer(Transformer),
}

/// Longest sequence the transformer must accept for `cfg`'s task.
fn transformer_shape(cfg: &TrainConfig) -> (usize, usize) {
    match cfg.task {
        TaskKind::Pairwise => (cfg.vocab, 2 * cfg.seq_max + 1),
        TaskKind::Sva => (sva::vocabulary().len(), 2 + 3 * cfg.depth),
        TaskKind::Arithmetic => {
            let (s, t) = ArithmeticConfig {
                n: 0,
                min_digits: cfg.min_digits,
                max_digits: cfg.max_digits,
                ops: cfg.ops.clone(),
                allow_negative: cfg.allow_negative,
                seed: 0,
            }
            .max_lengths();
            (Charset::size(), s.max(t + 1))
        }
    }
}

fn num_classes(task: TaskKind) -> usize {
    match task {
        TaskKind::Pairwise | TaskKind::Sva => 2,
        TaskKind::Arithmetic => 0,
    }
}

impl Model {
    pub fn build(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        match cfg.model {
            ModelKind::Qatt => {
                let vocab = match cfg.task {
                    TaskKind::Sva => sva::vocabulary().len(),
                    _ => cfg.vocab,
                };
                Ok(Model::Qatt(QAtt::new(QAttConfig {
                    vocab,
                    d: cfg.d,
                    hidden_q: cfg.hidden_q,
                    num_classes: 2,
                    activation: cfg.activation,
                    kind: if cfg.variant == Variant::Real {
                        AttKind::Real
                    } else {
                        AttKind::Quaternion
                    },
                    init: cfg.init,
                    seed: cfg.seed,
                    share_compare: cfg.share_compare,
                })?))
            }
            ModelKind::Qtransformer => {
                let (vocab, max_len) = transformer_shape(cfg);
                let tc = TransformerConfig {
                    variant: cfg.variant,
                    layers: cfg.layers,
                    d_q: cfg.d,
                    heads: cfg.heads,
                    ffn_hidden: cfg.ffn_hidden,
                    vocab,
                    max_len,
                    seed: cfg.seed,
                    init: cfg.init,
                };
                Ok(Model::Transformer(match cfg.task {
                    TaskKind::Arithmetic => Transformer::seq2seq(tc)?,
                    task => Transformer::classifier(tc, num_classes(task))?,
                }))
            }
        }
    }

    /// The real-valued model at the same dimensions.
    pub fn reference(cfg: &TrainConfig) -> Result<Self> {
        Model::build(&TrainConfig {
            variant: Variant::Real,
            ..cfg.clone()
        })
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Qatt(m) => &m.params,
            Model::Transformer(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Qatt(m) => &mut m.params,
            Model::Transformer(m) => &mut m.params,
        }
    }

    /// Mean cross-entropy over the examples `idx` of `data`.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        params: &Binding,
        data: &Examples,
        idx: &[usize],
    ) -> Result<Var> {
        match (self, data) {
            (Model::Qatt(m), Examples::Pairs(v)) => {
                let pairs: Vec<(&[usize], &[usize])> = idx
                    .iter()
                    .map(|&i| (v[i].seq_a.as_slice(), v[i].seq_b.as_slice()))
                    .collect();
                let logits = m.batch_logits(tape, params, &pairs)?;
                tape.cross_entropy(
                    logits,
                    &idx.iter().map(|&i| Some(v[i].label)).collect::<Vec<_>>(),
                )
            }
            (Model::Qatt(m), Examples::Sva(v)) => {
                let ids: Vec<Vec<usize>> = idx.iter().map(|&i| v[i].ids()).collect();
                let pairs: Vec<(&[usize], &[usize])> =
                    ids.iter().map(|s| (s.as_slice(), s.as_slice())).collect();
                let logits = m.batch_logits(tape, params, &pairs)?;
                tape.cross_entropy(
                    logits,
                    &idx.iter().map(|&i| Some(v[i].label)).collect::<Vec<_>>(),
                )
            }
            (Model::Transformer(m), Examples::Transduction(v)) => {
                let src: Vec<Vec<usize>> = idx.iter().map(|&i| v[i].source_ids()).collect();
                let (tin, tout): (Vec<_>, Vec<_>) =
                    idx.iter().map(|&i| v[i].teacher_forcing()).unzip();
                let src = SeqBatch::new(&src, arithmetic::PAD);
                let tgt_in = SeqBatch::new(&tin, arithmetic::PAD);
                let mut targets = Vec::with_capacity(tgt_in.rows());
                for t in &tout {
                    targets.extend(t.iter().map(|&x| Some(x)));
                    targets.extend(std::iter::repeat_n(None, tgt_in.len - t.len()));
                }
                Ok(m.seq2seq_loss(tape, params, &src, &tgt_in, &targets)?.1)
            }
            (Model::Transformer(m), data @ (Examples::Pairs(_) | Examples::Sva(_))) => {
                let (seqs, labels) = classification_inputs(data, idx);
                let logits = m.classify(tape, params, &SeqBatch::new(&seqs, pairwise::PAD))?;
                tape.cross_entropy(logits, &labels.into_iter().map(Some).collect::<Vec<_>>())
            }
            _ => Err(Error::Contract("model does not fit the task".into())),
        }
    }

    /// Accuracy for classification, per-sequence exact match for transduction.
    pub fn evaluate(&self, data: &Examples) -> Result<f64> {
        const CHUNK: usize = 100;
        let n = data.len();
        if n == 0 {
            return Ok(0.0);
        }
        if let (Model::Transformer(m), Examples::Transduction(v)) = (self, data) {
            let max_target = v.iter().map(|e| e.target.len()).max().unwrap_or(0);
            let mut predictions = Vec::with_capacity(n);
            for chunk in v.chunks(CHUNK) {
                let sources: Vec<Vec<usize>> = chunk.iter().map(|e| e.source_ids()).collect();
                predictions.extend(m.greedy_decode(
                    &sources,
                    arithmetic::BOS,
                    arithmetic::EOS,
                    arithmetic::PAD,
                    max_target + 1,
                )?);
            }
            let targets: Vec<Vec<usize>> = v.iter().map(|e| e.target_ids()).collect();
            return Ok(exact_match(&predictions, &targets));
        }
        let mut correct = 0;
        let all: Vec<usize> = (0..n).collect();
        for idx in all.chunks(CHUNK) {
            let mut tape = Tape::new();
            let params = self.params().bind(&mut tape);
            let (logits, labels) = match (self, data) {
                (Model::Qatt(m), Examples::Pairs(v)) => {
                    let pairs: Vec<(&[usize], &[usize])> = idx
                        .iter()
                        .map(|&i| (v[i].seq_a.as_slice(), v[i].seq_b.as_slice()))
                        .collect();
                    (
                        m.batch_logits(&mut tape, &params, &pairs)?,
                        idx.iter().map(|&i| v[i].label).collect::<Vec<_>>(),
                    )
                }
                (Model::Qatt(m), Examples::Sva(v)) => {
                    let ids: Vec<Vec<usize>> = idx.iter().map(|&i| v[i].ids()).collect();
                    let pairs: Vec<(&[usize], &[usize])> =
                        ids.iter().map(|s| (s.as_slice(), s.as_slice())).collect();
                    (
                        m.batch_logits(&mut tape, &params, &pairs)?,
                        idx.iter().map(|&i| v[i].label).collect(),
                    )
                }
                (Model::Transformer(m), data) => {
                    let (seqs, labels) = classification_inputs(data, idx);
                    (
                        m.classify(&mut tape, &params, &SeqBatch::new(&seqs, pairwise::PAD))?,
                        labels,
                    )
                }
                _ => return Err(Error::Contract("model does not fit the task".into())),
            };
            let value = tape.value(logits);
            correct += labels
                .iter()
                .enumerate()
                .filter(|(r, &l)| argmax(value.row(*r)) == l)
                .count();
        }
        Ok(correct as f64 / n as f64)
    }

    /// Greedy transduction of one source string.
    pub fn decode(&self, source: &str) -> Result<String> {
        let Model::Transformer(m) = self else {
            return Err(Error::Contract(
                "decoding needs a transduction transformer".into(),
            ));
        };
        if !m.is_seq2seq() {
            return Err(Error::Contract(
                "decoding needs a transduction transformer".into(),
            ));
        }
        if source.is_empty() {
            return Err(Error::Contract("empty source".into()));
        }
        let ids = Charset::encode(source)?;
        let out = m.greedy_decode(
            &[ids],
            arithmetic::BOS,
            arithmetic::EOS,
            arithmetic::PAD,
            m.config.max_len,
        )?;
        Ok(Charset::decode(&out[0]))
    }
}

fn classification_inputs(data: &Examples, idx: &[usize]) -> (Vec<Vec<usize>>, Vec<usize>) {
    match data {
        Examples::Pairs(v) => idx.iter().map(|&i| (v[i].packed(), v[i].label)).unzip(),
        Examples::Sva(v) => idx.iter().map(|&i| (v[i].ids(), v[i].label)).unzip(),
        Examples::Transduction(_) => unreachable!("transduction is not classification"),
    }
}

/// Endless reshuffled passes over `0..n`.
struct BatchOrder {
    rng: SplitMix,
    perm: Vec<usize>,
    cursor: usize,
}

impl BatchOrder {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = SplitMix::derive(seed, 0x0062_6174_6368);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        BatchOrder {
            rng,
            perm,
            cursor: 0,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.perm.len() {
                self.rng.shuffle(&mut self.perm);
                self.cursor = 0;
            }
            out.push(self.perm[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Metric name for a task.
pub fn metric_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Arithmetic => "exact_match",
        _ => "accuracy",
    }
}

/// Result of [`train`]: the trained model and its report.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub report: RunReport,
}

/// Runs `cfg`. Metrics are evaluated at step 0, every `eval_every` steps,
/// and at the last step; when `out` is given the run directory receives
/// `config.txt`, `metrics.tsv`, `report.json` and `checkpoint.qnn`.
pub fn train(cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    let started = Instant::now();
    let mut model = Model::build(cfg)?;
    let data = Dataset::generate(cfg)?;
    let mut metrics = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.txt"), cfg.to_ini_string())?;
            let mut f = fs::File::create(dir.join("metrics.tsv"))?;
            writeln!(f, "step\tloss\tmetric")?;
            Some(f)
        }
        None => None,
    };
    let mut adam = Adam::new(model.params(), cfg.learning_rate);
    let mut order = BatchOrder::new(data.train.len(), cfg.seed);
    let mut curve = Vec::new();
    let mut stopped_early = false;
    let mut last = CurvePoint {
        step: 0,
        loss: f64::NAN,
        metric: f64::NAN,
    };
    for step in 0..=cfg.steps {
        let idx = order.next(cfg.batch_size);
        let mut tape = Tape::new();
        let params = model.params().bind(&mut tape);
        let loss = model.batch_loss(&mut tape, &params, &data.train, &idx)?;
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::Domain(format!(
                "loss became {loss_value} at step {step}"
            )));
        }
        last = CurvePoint {
            step,
            loss: loss_value,
            metric: last.metric,
        };
        if step % cfg.eval_every == 0 || step == cfg.steps {
            last.metric = model.evaluate(&data.val)?;
            curve.push(last);
            if let Some(f) = metrics.as_mut() {
                writeln!(f, "{}\t{}\t{}", step, last.loss, last.metric)?;
            }
            if cfg.target_metric.is_some_and(|t| last.metric >= t) {
                stopped_early = step < cfg.steps;
                break;
            }
        }
        if step == cfg.steps {
            break;
        }
        let grads = tape.backward(loss)?;
        let mut grads = model.params().collect_grads(&params, &grads);
        if cfg.clip_norm > 0.0 {
            clip_global_norm(&mut grads, cfg.clip_norm);
        }
        let lr = if cfg.warmup > 0 {
            cfg.learning_rate * ((step + 1) as f64 / cfg.warmup as f64).min(1.0)
        } else {
            cfg.learning_rate
        };
        adam.step_with_lr(model.params_mut(), &grads, lr);
    }
    let reference = Model::reference(cfg)?;
    let report = RunReport {
        task: cfg.task,
        model: cfg.model,
        variant: cfg.variant,
        metric_name: metric_name(cfg.task).to_string(),
        final_loss: last.loss,
        final_metric: last.metric,
        steps_run: last.step,
        stopped_early,
        params: ParamSummary::new(model.params(), reference.params()),
        curve,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        checkpoint::save(model.params(), &dir.join("checkpoint.qnn"))?;
        fs::write(dir.join("report.json"), report.to_json())?;
    }
    Ok(TrainOutcome { model, report })
}

/// Rebuilds the model of a run directory from `config.txt` and
/// `checkpoint.qnn`.
pub fn load_run(dir: &Path) -> Result<(TrainConfig, Model)> {
    let cfg = TrainConfig::load(&dir.join("config.txt"))?;
    let mut model = Model::build(&cfg)?;
    checkpoint::load(model.params_mut(), &dir.join("checkpoint.qnn"))?;
    Ok((cfg, model))
}

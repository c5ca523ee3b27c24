//! Compact 1-D CNN modulation classifier and accuracy evaluation of
//! original and reconstructed frames.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{self, RateReport};
use crate::error::{Error, Result};
use crate::hae::ModelStack;
use crate::ndiff::ops::{
    cross_entropy, global_mean_pool, global_mean_pool_backward, leaky_relu, leaky_relu_backward,
};
use crate::ndiff::{
    AdamConfig, Checkpoint, Conv1d, Linear, OptimState, Param, Parameterized, Tensor, LEAKY_SLOPE,
};
use crate::sigsynth::{IqFrame, LabeledDataset, ModClass};

pub const NUM_CLASSES: usize = ModClass::COUNT;

/// `(c_in, c_out, kernel, stride, padding)` of the four conv blocks. The two
/// pointwise blocks build per-sample amplitude features; the 4-ASK/8-PAM and
/// 16-PSK/32-QAM pairs differ mainly in their amplitude histograms.
const BLOCKS: [(usize, usize, usize, usize, usize); 4] = [
    (2, 32, 1, 1, 0),
    (32, 32, 1, 1, 0),
    (32, 64, 5, 2, 2),
    (64, 64, 5, 2, 2),
];
const FEATURES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Stop once an epoch's mean training loss falls below this.
    pub target_loss: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            seed: 0,
            epochs: 30,
            batch_size: 32,
            learning_rate: 3e-3,
            target_loss: 1e-3,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub heldout_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    convs: [Conv1d; 4],
    head: Linear,
    pub frame_len: usize,
    pub history: Vec<ClassifierEpoch>,
}

struct Trace {
    /// Inputs of each conv block.
    inputs: [Tensor; 4],
    /// Activated output of the last block.
    features: Tensor,
    pooled: Tensor,
}

impl Classifier {
    pub fn new(frame_len: usize, seed: u64) -> Result<Self> {
        if frame_len < 16 {
            return Err(Error::Config(format!(
                "frame length {frame_len} is too short for the classifier"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = BLOCKS.map(|(ci, co, k, s, p)| Conv1d::new(ci, co, k, s, p, &mut rng));
        // rescale to He-uniform so activations keep their size through depth
        for c in &mut convs {
            c.weight.value.scale(6f32.sqrt());
        }
        let head = Linear::new(FEATURES, NUM_CLASSES, &mut rng);
        Ok(Classifier {
            convs,
            head,
            frame_len,
            history: Vec::new(),
        })
    }

    fn check_frame(&self, x: &IqFrame) -> Result<()> {
        if x.len() != self.frame_len {
            return Err(Error::dim(
                "classifier",
                format!(
                    "frame length {} but classifier expects {}",
                    x.len(),
                    self.frame_len
                ),
            ));
        }
        Ok(())
    }

    fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, Trace)> {
        let mut inputs: Vec<Tensor> = Vec::with_capacity(4);
        let mut cur = x.clone();
        for conv in &self.convs {
            let out = leaky_relu(&conv.forward(&cur)?, LEAKY_SLOPE);
            inputs.push(std::mem::replace(&mut cur, out));
        }
        let pooled = global_mean_pool(&cur)?;
        let logits = self.head.forward(&pooled)?;
        let inputs: [Tensor; 4] = inputs.try_into().expect("four blocks");
        Ok((
            logits,
            Trace {
                inputs,
                features: cur,
                pooled,
            },
        ))
    }

    fn backward(&mut self, trace: &Trace, grad_logits: &Tensor) -> Result<()> {
        let g = self.head.backward(&trace.pooled, grad_logits)?;
        let mut g = global_mean_pool_backward(&g, trace.features.dim(1));
        let mut act = &trace.features;
        for j in (0..4).rev() {
            g = leaky_relu_backward(act, &g, LEAKY_SLOPE);
            g = self.convs[j].backward(&trace.inputs[j], &g)?;
            act = &trace.inputs[j];
        }
        Ok(())
    }

    pub fn logits(&self, x: &IqFrame) -> Result<Tensor> {
        self.check_frame(x)?;
        Ok(self.forward_traced(&x.to_tensor())?.0)
    }

    /// Class with the largest logit; ties go to the lowest label.
    pub fn predict(&self, x: &IqFrame) -> Result<ModClass> {
        let logits = self.logits(x)?;
        let mut best = 0;
        for (k, &v) in logits.data().iter().enumerate().skip(1) {
            if v > logits.data()[best] {
                best = k;
            }
        }
        ModClass::from_label(best as u8)
    }

    fn params_mut_list(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        out.extend(self.head.params_mut());
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.insert(
            "meta.frame_len",
            Tensor::from_vec(&[1], vec![self.frame_len as f32]).unwrap(),
        );
        for (name, p) in self.params() {
            ck.insert(name, p.value.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let frame_len = ck.require("meta.frame_len")?.data()[0] as usize;
        let mut clf = Classifier::new(frame_len, 0)?;
        let names: Vec<String> = clf.params().into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(clf.params_mut()) {
            let t = ck.require(name)?;
            if t.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            *p = Param::new(t.clone());
        }
        Ok(clf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl Parameterized for Classifier {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (j, c) in self.convs.iter().enumerate() {
            out.extend(
                c.params()
                    .into_iter()
                    .map(|(n, p)| (format!("conv{j}.{n}"), p)),
            );
        }
        out.extend(
            self.head
                .params()
                .into_iter()
                .map(|(n, p)| (format!("head.{n}"), p)),
        );
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.params_mut_list()
    }
}

/// Trains on clean frames. With `heldout`, each epoch also records held-out
/// accuracy (never used for model selection).
pub fn train_classifier(
    train: &LabeledDataset,
    heldout: Option<&LabeledDataset>,
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    cfg.validate()?;
    if train.classes_present() < 2 {
        return Err(Error::Config(format!(
            "classifier training needs at least 2 classes, dataset has {}",
            train.classes_present()
        )));
    }
    let mut clf = Classifier::new(train.frame_len(), cfg.seed)?;
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut optim = OptimState::new(adam, clf.params().into_iter().map(|(_, p)| p));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let inputs: Vec<(Tensor, usize)> = train
        .frames
        .iter()
        .map(|(f, c)| (f.to_tensor(), c.label() as usize))
        .collect();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            clf.zero_grad();
            for &i in batch {
                let (x, label) = &inputs[i];
                let (logits, trace) = clf.forward_traced(x)?;
                let (loss, grad) = cross_entropy(&logits, *label)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        stage: "classifier".into(),
                        level: 0,
                        epoch,
                        detail: "non-finite loss".into(),
                    });
                }
                loss_sum += loss as f64;
                let pred = logits.data().iter().enumerate().fold(0, |b, (k, &v)| {
                    if v > logits.data()[b] {
                        k
                    } else {
                        b
                    }
                });
                correct += usize::from(pred == *label);
                clf.backward(&trace, &grad)?;
            }
            let scale = 1.0 / batch.len() as f32;
            let mut params = clf.params_mut_list();
            for p in params.iter_mut() {
                p.grad.scale(scale);
            }
            optim.step(&mut params);
        }
        let n = inputs.len() as f64;
        let heldout_accuracy = match heldout {
            Some(h) => Some(evaluate(&clf, h)?.accuracy),
            None => None,
        };
        let loss = loss_sum / n;
        clf.history.push(ClassifierEpoch {
            epoch,
            loss,
            train_accuracy: correct as f64 / n,
            heldout_accuracy,
        });
        if loss < cfg.target_loss {
            break;
        }
    }
    Ok(clf)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    /// `original`, or `L{i}-{stage}` for reconstructions.
    pub source: String,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    /// `None` for classes absent from the evaluated frames.
    pub per_class: [Option<f64>; NUM_CLASSES],
    pub total: u64,
}

impl EvalResult {
    fn from_pairs(source: &str, pairs: impl Iterator<Item = (ModClass, ModClass)>) -> Result<Self> {
        let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for (truth, pred) in pairs {
            confusion[truth.label() as usize][pred.label() as usize] += 1;
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Analysis("no frames to evaluate".into()));
        }
        let correct: u64 = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();
        let per_class = std::array::from_fn(|k| {
            let n: u64 = confusion[k].iter().sum();
            (n > 0).then(|| confusion[k][k] as f64 / n as f64)
        });
        Ok(EvalResult {
            source: source.to_string(),
            accuracy: correct as f64 / total as f64,
            confusion,
            per_class,
            total,
        })
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for c in ModClass::ALL {
            let _ = write!(out, ",{}", c.name());
        }
        out.push('\n');
        for c in ModClass::ALL {
            out.push_str(c.name());
            for v in self.confusion[c.label() as usize] {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn evaluate(clf: &Classifier, frames: &LabeledDataset) -> Result<EvalResult> {
    evaluate_frames(clf, "original", frames.frames.iter().map(|(f, c)| (f, *c)))
}

pub fn evaluate_frames<'a>(
    clf: &Classifier,
    source: &str,
    frames: impl Iterator<Item = (&'a IqFrame, ModClass)>,
) -> Result<EvalResult> {
    let pairs: Vec<(ModClass, ModClass)> = frames
        .map(|(f, c)| Ok((c, clf.predict(f)?)))
        .collect::<Result<_>>()?;
    EvalResult::from_pairs(source, pairs.into_iter())
}

/// One row per source: `source,accuracy,total,<per-class accuracies>`.
pub fn eval_csv(results: &[EvalResult]) -> String {
    let mut out = String::from("source,accuracy,total");
    for c in ModClass::ALL {
        let _ = write!(out, ",acc_{}", c.name());
    }
    out.push('\n');
    for r in results {
        let _ = write!(out, "{},{:.6},{}", r.source, r.accuracy, r.total);
        for a in r.per_class {
            match a {
                Some(v) => {
                    let _ = write!(out, ",{v:.6}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sweep {
    pub stage: String,
    /// Baseline first, then levels `0..depth`.
    pub results: Vec<EvalResult>,
    pub rates: Vec<RateReport>,
}

impl Sweep {
    pub fn level_accuracies(&self) -> Vec<f64> {
        self.results[1..].iter().map(|r| r.accuracy).collect()
    }
}

/// Accuracy on the original frames and on each level's reconstruction. VQ
/// stacks go through `compress`/`decompress`; an HAE stack bypasses
/// quantization. HAE rates use `nominal_n_c`, since no codebook exists.
pub fn eval_reconstruction_sweep(
    clf: &Classifier,
    stack: &ModelStack,
    eval: &LabeledDataset,
    nominal_n_c: usize,
) -> Result<Sweep> {
    stack.require_trained(stack.depth() - 1)?;
    let stage = stack.stage.name();
    let mut results = vec![evaluate(clf, eval)?];
    let mut rates = Vec::new();
    let id = stack.digest();
    for level in 0..stack.depth() {
        let recon: Vec<(IqFrame, ModClass)> = eval
            .frames
            .iter()
            .map(|(f, c)| {
                let r = if stack.stage.quantized() {
                    let blob = codec::compress_with_id(f, stack, level, id)?;
                    codec::decompress_with_id(&blob, stack, id)?
                } else {
                    stack.reconstruct(f, level, false)?
                };
                Ok((r, *c))
            })
            .collect::<Result<_>>()?;
        let source = format!("L{level}-{stage}");
        results.push(evaluate_frames(
            clf,
            &source,
            recon.iter().map(|(f, c)| (f, *c)),
        )?);
        let n_c = stack.levels[level]
            .codebook
            .as_ref()
            .map_or(nominal_n_c, |cb| cb.len());
        rates.push(codec::compression_ratio(level, stack.frame_len(), n_c)?);
    }
    Ok(Sweep {
        stage: stage.to_string(),
        results,
        rates,
    })
}

/// Counts adjacent increases of more than `slack` in a sequence that should
/// not increase, and returns `(inversions, largest increase)`.
pub fn trend_inversions(values: &[f64]) -> (usize, f64) {
    let mut count = 0;
    let mut largest = 0.0f64;
    for w in values.windows(2) {
        let rise = w[1] - w[0];
        if rise > 0.0 {
            count += 1;
            largest = largest.max(rise);
        }
    }
    (count, largest)
}

//! Domain adaptation by class-conditional alignment of embeddings.
//!
//! Training runs in two phases:
//!
//! 1. [`pretrain`] fits encoder and classifier on labeled source data only.
//! 2. [`dacad_train`] repeats for `iterations` outer rounds:
//!    - rebuild the pseudo-label set: every target point whose top softmax
//!      probability strictly exceeds `tau`, labeled with its argmax class;
//!    - then for `alternations` inner rounds, take one Adam step on the
//!      encoder alone against `lambda · Σ_j SWD(source_j, pseudo_target_j)`,
//!      followed by one Adam step on source cross-entropy.
//!
//! Pseudo-labels are constants for differentiation. Every random draw
//! (mini-batches, projection directions, augmentation) comes from a stream
//! keyed by the master seed and the loop counters, so the cross-entropy
//! steps see identical batches whether or not the alignment step runs.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::image::{augment, AugmentConfig};
use crate::data::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::model::{grads_to_tensors, predict_labels, ModelParams};
use crate::numerics::adam::{AdamConfig, AdamState};
use crate::numerics::layers::LayerGrad;
use crate::numerics::tensor::Tensor;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::swd::{swd_backward, swd_estimate_with, ProjectionSet, SwdConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the alignment loss.
    pub lambda: f64,
    /// Pseudo-label confidence threshold, in `(0, 1]`.
    pub tau: f64,
    /// Outer rounds; pseudo-labels are rebuilt at the start of each.
    pub iterations: usize,
    /// Inner alignment/classification alternations per outer round.
    pub alternations: usize,
    /// Samples per class drawn for each alignment step; `None` uses every
    /// available sample.
    pub align_batch_per_class: Option<usize>,
    /// Source mini-batch size for cross-entropy steps; `None` is full batch.
    pub classifier_batch_size: Option<usize>,
    /// Cross-entropy steps taken by [`pretrain`].
    pub pretrain_steps: usize,
    pub adam: AdamConfig,
    pub swd: SwdConfig,
    /// Whether the cross-entropy step also updates the encoder. When false
    /// only the classifier head moves in that step.
    pub co_train_encoder: bool,
    /// Augmentation of source image batches; ignored for `None`.
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tau: 0.99,
            iterations: 30,
            alternations: 10,
            align_batch_per_class: Some(32),
            classifier_batch_size: Some(64),
            pretrain_steps: 1000,
            adam: AdamConfig::default(),
            swd: SwdConfig::default(),
            co_train_encoder: true,
            augment: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Precondition(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and ≥ 0, got {}", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if self.alternations == 0 {
            return fail("alternations must be at least 1".into());
        }
        if self.align_batch_per_class == Some(0) || self.classifier_batch_size == Some(0) {
            return fail("batch sizes must be positive".into());
        }
        self.adam.validate()?;
        self.swd.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// Confident target predictions: `indices[i]` was assigned `classes[i]` with
/// probability `confidences[i] > tau`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoLabelSet {
    pub indices: Vec<usize>,
    pub classes: Vec<usize>,
    pub confidences: Vec<f64>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn counts_per_class(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for &c in &self.classes {
            counts[c] += 1;
        }
        counts
    }

    /// Target row indices grouped by pseudo-label.
    pub fn class_indices(&self, num_classes: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); num_classes];
        for (&i, &c) in self.indices.iter().zip(&self.classes) {
            out[c].push(i);
        }
        out
    }
}

pub fn build_pseudo_labels(model: &ModelParams, target: &UnlabeledDataset, tau: f64) -> Result<PseudoLabelSet> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Precondition(format!("tau must lie in (0, 1], got {tau}")));
    }
    if target.is_empty() {
        return Ok(PseudoLabelSet::default());
    }
    let probs = model.predict_proba(&target.features)?;
    let (labels, conf) = predict_labels(&probs);
    let mut set = PseudoLabelSet::default();
    for (i, (label, c)) in labels.into_iter().zip(conf).enumerate() {
        if c > tau {
            set.indices.push(i);
            set.classes.push(label);
            set.confidences.push(c);
        }
    }
    Ok(set)
}

/// Equal-size per-class row selections for one alignment step.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentBatch {
    pub source: Vec<Vec<usize>>,
    pub target: Vec<Vec<usize>>,
}

impl AlignmentBatch {
    pub fn active_classes(&self) -> usize {
        self.source.iter().filter(|s| !s.is_empty()).count()
    }
}

/// For every class with pseudo-labeled target points, draws the same number
/// of source and target rows uniformly without replacement: the smaller of
/// the two class sizes, capped by `per_class`.
pub fn sample_alignment_batch<R: Rng>(
    source: &LabeledDataset,
    pseudo: &PseudoLabelSet,
    per_class: Option<usize>,
    rng: &mut R,
) -> AlignmentBatch {
    let k = source
        .num_classes
        .max(pseudo.classes.iter().max().map_or(0, |&c| c + 1));
    let mut src = source.class_indices();
    src.resize(k, Vec::new());
    let tgt = pseudo.class_indices(k);
    let mut batch = AlignmentBatch {
        source: vec![Vec::new(); k],
        target: vec![Vec::new(); k],
    };
    for j in 0..k {
        let mut m = src[j].len().min(tgt[j].len());
        if let Some(cap) = per_class {
            m = m.min(cap);
        }
        if m == 0 {
            continue;
        }
        batch.source[j] = sample_indices(rng, src[j].len(), m).iter().map(|i| src[j][i]).collect();
        batch.target[j] = sample_indices(rng, tgt[j].len(), m).iter().map(|i| tgt[j][i]).collect();
    }
    batch
}

/// Value and encoder gradient of the summed per-class SWD.
#[derive(Debug, Clone)]
pub struct ConditionalSwd {
    pub loss: f64,
    pub per_class: Vec<f64>,
    pub encoder_grads: Vec<LayerGrad>,
    /// Classes that contributed a term. Zero means there was nothing to
    /// align and the encoder step should be skipped.
    pub active_classes: usize,
}

impl ConditionalSwd {
    pub fn is_degenerate(&self) -> bool {
        self.active_classes == 0
    }
}

/// `Σ_j SWD(encode(source rows of j), encode(target rows of j))` over the
/// classes present in `batch`, with the gradient back-propagated through the
/// encoder.
pub fn conditional_swd_loss(
    model: &ModelParams,
    source: &Tensor,
    target: &Tensor,
    batch: &AlignmentBatch,
    projections: &ProjectionSet,
    cfg: &SwdConfig,
) -> Result<ConditionalSwd> {
    let k = batch.source.len();
    if batch.target.len() != k {
        return Err(Error::Size {
            op: "conditional_swd_loss",
            left: k,
            right: batch.target.len(),
        });
    }
    let zero_grads = || -> Vec<LayerGrad> {
        model
            .encoder
            .layers
            .iter()
            .map(|l| {
                let z = l.zeros_like();
                LayerGrad {
                    weight: z.weight,
                    bias: z.bias,
                    input: Tensor::zeros(&[0, l.input_dim()]),
                }
            })
            .collect()
    };

    // One forward pass over every selected row: source rows of all classes
    // first, then target rows of all classes.
    let mut rows_s = Vec::new();
    let mut rows_t = Vec::new();
    let mut spans = Vec::with_capacity(k);
    for j in 0..k {
        if batch.source[j].len() != batch.target[j].len() {
            return Err(Error::Size {
                op: "conditional_swd_loss",
                left: batch.source[j].len(),
                right: batch.target[j].len(),
            });
        }
        spans.push((rows_s.len(), batch.source[j].len()));
        rows_s.extend_from_slice(&batch.source[j]);
        rows_t.extend_from_slice(&batch.target[j]);
    }
    let active = spans.iter().filter(|(_, len)| *len > 0).count();
    if active == 0 {
        return Ok(ConditionalSwd {
            loss: 0.0,
            per_class: vec![0.0; k],
            encoder_grads: zero_grads(),
            active_classes: 0,
        });
    }
    let n_s = rows_s.len();
    let x = Tensor::vstack(&[&source.select_rows(&rows_s)?, &target.select_rows(&rows_t)?])?;
    let (z, cache) = model.encoder.forward(&x)?;
    let f = z.cols();
    let mut dz = Tensor::zeros(z.shape());
    let mut per_class = vec![0.0; k];
    for (j, &(start, len)) in spans.iter().enumerate() {
        if len == 0 {
            continue;
        }
        let zs_rows: Vec<usize> = (start..start + len).collect();
        let zt_rows: Vec<usize> = (n_s + start..n_s + start + len).collect();
        let zs = z.select_rows(&zs_rows)?;
        let zt = z.select_rows(&zt_rows)?;
        let est = swd_estimate_with(&zs, &zt, projections.clone(), cfg)?;
        let (gs, gt) = swd_backward(&est, &zs, &zt, cfg)?;
        per_class[j] = est.value;
        for r in 0..len {
            dz.row_mut(start + r).copy_from_slice(gs.row(r));
            dz.row_mut(n_s + start + r).copy_from_slice(gt.row(r));
        }
        debug_assert_eq!(gs.cols(), f);
    }
    let (encoder_grads, _) = model.encoder.backward(&cache, &dz)?;
    Ok(ConditionalSwd {
        loss: per_class.iter().sum(),
        per_class,
        encoder_grads,
        active_classes: active,
    })
}

/// Overall and per-class accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class_correct: Vec<usize>,
    pub per_class_total: Vec<usize>,
}

impl Accuracy {
    /// Accuracy of each class, `None` for classes absent from the data.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        self.per_class_correct
            .iter()
            .zip(&self.per_class_total)
            .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
            .collect()
    }
}

pub fn evaluate(model: &ModelParams, dataset: &LabeledDataset) -> Result<Accuracy> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluate"));
    }
    let probs = model.predict_proba(&dataset.features)?;
    let (pred, _) = predict_labels(&probs);
    Ok(accuracy_of(
        &pred,
        &dataset.labels,
        model.num_classes().max(dataset.num_classes),
    ))
}

/// Scores predicted labels against the truth.
pub fn accuracy_of(predicted: &[usize], truth: &[usize], num_classes: usize) -> Accuracy {
    let mut per_class_correct = vec![0; num_classes];
    let mut per_class_total = vec![0; num_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        per_class_total[t] += 1;
        if p == t {
            per_class_correct[t] += 1;
        }
    }
    let correct: usize = per_class_correct.iter().sum();
    Accuracy {
        accuracy: correct as f64 / truth.len() as f64,
        correct,
        total: truth.len(),
        per_class_correct,
        per_class_total,
    }
}

/// Source-side statistics of a pre-training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainRecord {
    pub epoch: usize,
    pub steps: usize,
    pub ce_loss: f64,
    pub source_accuracy: f64,
}

fn classifier_batch(
    source: &LabeledDataset,
    cfg: &TrainConfig,
    stream: Stream,
    a: u64,
    b: u64,
) -> Result<(Tensor, Vec<usize>)> {
    let n = source.len();
    let rows: Vec<usize> = match cfg.classifier_batch_size {
        Some(bs) if bs < n => {
            let mut rng = stream_rng(cfg.seed, stream, a, b);
            sample_indices(&mut rng, n, bs).into_vec()
        }
        _ => (0..n).collect(),
    };
    let mut x = source.features.select_rows(&rows)?;
    if let Some(aug) = &cfg.augment {
        let seed = derive_seed(cfg.seed, Stream::Augment, (stream as u64) << 32 | a, b);
        x = augment(&x, source.image_shape, aug, seed)?;
    }
    Ok((x, rows.iter().map(|&i| source.labels[i]).collect()))
}

fn check_inputs(source: &LabeledDataset, model: &ModelParams, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyInput("source dataset"));
    }
    let arch = model.architecture();
    if source.dim() != arch.input_dim || source.num_classes > arch.num_classes {
        return Err(Error::shape(
            "training data vs model",
            &[source.dim(), source.num_classes],
            &[arch.input_dim, arch.num_classes],
        ));
    }
    if cfg.augment.is_some() && source.image_shape.is_none() {
        return Err(Error::Precondition("augmentation configured for non-image data".into()));
    }
    Ok(())
}

/// Fits encoder and classifier to the labeled source data with
/// `cfg.pretrain_steps` Adam steps on cross-entropy. `lambda` and the target
/// domain play no part.
pub fn pretrain(
    source: &LabeledDataset,
    init: &ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<PretrainRecord>)> {
    check_inputs(source, init, cfg)?;
    let mut model = init.clone();
    let mut opt = AdamState::new(cfg.adam, model.params());
    let steps_per_epoch = cfg
        .classifier_batch_size
        .map_or(1, |bs| source.len().div_ceil(bs))
        .max(1);
    let mut records = Vec::new();
    let mut epoch_loss = 0.0;
    let mut epoch_steps = 0;
    for step in 0..cfg.pretrain_steps {
        let (x, labels) = classifier_batch(source, cfg, Stream::Pretrain, step as u64, 0)?;
        let g = model.ce_grads(&x, &labels)?;
        if !g.loss.is_finite() {
            return Err(Error::Divergence {
                iteration: step + 1,
                what: "pre-training loss",
            });
        }
        let mut grads = grads_to_tensors(&g.encoder);
        grads.extend(grads_to_tensors(&g.classifier));
        opt.step(&mut model.params_mut(), &grads)?;
        if !model.is_finite() {
            return Err(Error::Divergence {
                iteration: step + 1,
                what: "parameters",
            });
        }
        epoch_loss += g.loss;
        epoch_steps += 1;
        if epoch_steps == steps_per_epoch || step + 1 == cfg.pretrain_steps {
            records.push(PretrainRecord {
                epoch: records.len() + 1,
                steps: step + 1,
                ce_loss: epoch_loss / epoch_steps as f64,
                source_accuracy: evaluate(&model, source)?.accuracy,
            });
            epoch_loss = 0.0;
            epoch_steps = 0;
        }
    }
    Ok((model, records))
}

/// Statistics of one outer round.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based outer round.
    pub iteration: usize,
    /// Mean source cross-entropy over the round's classification steps.
    pub ce_loss: f64,
    /// Mean conditional SWD over the round's alignment steps (before `lambda`).
    pub swd_loss: f64,
    pub source_accuracy: f64,
    /// Only when evaluation labels for the target were supplied.
    pub target_accuracy: Option<f64>,
    /// Pseudo-labels per class, as built at the start of the round.
    pub pseudo_label_counts: Vec<usize>,
    /// Encoder updates taken against the alignment loss this round.
    pub alignment_steps: usize,
    /// Cross-entropy updates taken this round.
    pub classifier_steps: usize,
}

impl IterationRecord {
    pub fn pseudo_label_total(&self) -> usize {
        self.pseudo_label_counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Alignment step followed by the cross-entropy step.
    Dacad,
    /// Cross-entropy steps only, with the same batches and step count.
    SourceOnly,
}

/// Called after every outer round with its record, the current model and the
/// pseudo-labels used during the round.
pub type Observer<'a> = dyn FnMut(&IterationRecord, &ModelParams, &PseudoLabelSet) -> std::io::Result<()> + 'a;

pub fn dacad_train(
    source: &LabeledDataset,
    target: &UnlabeledDataset,
    init: &ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    train(source, target, init, cfg, Mode::Dacad, None, &mut |_, _, _| Ok(()))
}

/// Continues training on source cross-entropy only; the baseline for
/// [`dacad_train`].
pub fn source_only_train(
    source: &LabeledDataset,
    target: &UnlabeledDataset,
    init: &ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    train(source, target, init, cfg, Mode::SourceOnly, None, &mut |_, _, _| Ok(()))
}

/// The adaptation loop. `eval_target` is used only to fill
/// `target_accuracy` in the log.
pub fn train(
    source: &LabeledDataset,
    target: &UnlabeledDataset,
    init: &ModelParams,
    cfg: &TrainConfig,
    mode: Mode,
    eval_target: Option<&LabeledDataset>,
    observer: &mut Observer<'_>,
) -> Result<(ModelParams, TrainLog)> {
    check_inputs(source, init, cfg)?;
    if target.dim() != source.dim() && !target.is_empty() {
        return Err(Error::shape("target vs source", &[target.dim()], &[source.dim()]));
    }
    let mut model = init.clone();
    let k = model.num_classes();
    let f = model.architecture().embedding_dim();
    let mut encoder_opt = AdamState::new(cfg.adam, model.encoder_params());
    let n_encoder = model.encoder_params().len();
    let mut ce_opt = if cfg.co_train_encoder {
        AdamState::new(cfg.adam, model.params())
    } else {
        AdamState::new(cfg.adam, model.params().split_off(n_encoder))
    };
    let mut log = TrainLog::default();

    for itr in 0..cfg.iterations {
        let pseudo = build_pseudo_labels(&model, target, cfg.tau)?;
        let mut ce_total = 0.0;
        let mut swd_total = 0.0;
        let mut swd_steps = 0;
        for alt in 0..cfg.alternations {
            let step = (itr * cfg.alternations + alt) as u64;
            if mode == Mode::Dacad {
                let mut rng = stream_rng(cfg.seed, Stream::AlignBatch, step, 0);
                let batch = sample_alignment_batch(source, &pseudo, cfg.align_batch_per_class, &mut rng);
                let proj_seed = derive_seed(cfg.swd.seed, Stream::Projections, cfg.seed, step);
                let proj = ProjectionSet::sample(cfg.swd.num_projections, f, proj_seed)?;
                let out = conditional_swd_loss(&model, &source.features, &target.features, &batch, &proj, &cfg.swd)
                    .map_err(|e| match e {
                        Error::NonFinite(_) => Error::Divergence {
                            iteration: itr + 1,
                            what: "embeddings",
                        },
                        e => e,
                    })?;
                if !out.loss.is_finite() {
                    return Err(Error::Divergence {
                        iteration: itr + 1,
                        what: "alignment loss",
                    });
                }
                if !out.is_degenerate() {
                    let grads: Vec<Tensor> = grads_to_tensors(&out.encoder_grads)
                        .iter()
                        .map(|g| g.scale(cfg.lambda))
                        .collect();
                    encoder_opt.step(&mut model.encoder_params_mut(), &grads)?;
                    if !model.is_finite() {
                        return Err(Error::Divergence {
                            iteration: itr + 1,
                            what: "parameters after alignment step",
                        });
                    }
                    swd_total += out.loss;
                    swd_steps += 1;
                }
            }

            let (x, labels) = classifier_batch(source, cfg, Stream::ClassifierBatch, step, 0)?;
            let g = model.ce_grads(&x, &labels)?;
            if !g.loss.is_finite() {
                return Err(Error::Divergence {
                    iteration: itr + 1,
                    what: "classification loss",
                });
            }
            if cfg.co_train_encoder {
                let mut grads = grads_to_tensors(&g.encoder);
                grads.extend(grads_to_tensors(&g.classifier));
                ce_opt.step(&mut model.params_mut(), &grads)?;
            } else {
                let mut params = model.params_mut();
                let mut head = params.split_off(n_encoder);
                ce_opt.step(&mut head, &grads_to_tensors(&g.classifier))?;
            }
            ce_total += g.loss;
            if !model.is_finite() {
                return Err(Error::Divergence {
                    iteration: itr + 1,
                    what: "parameters",
                });
            }
        }
        let record = IterationRecord {
            iteration: itr + 1,
            ce_loss: ce_total / cfg.alternations as f64,
            swd_loss: if swd_steps > 0 {
                swd_total / swd_steps as f64
            } else {
                0.0
            },
            source_accuracy: evaluate(&model, source)?.accuracy,
            target_accuracy: eval_target
                .map(|t| evaluate(&model, t))
                .transpose()?
                .map(|a| a.accuracy),
            pseudo_label_counts: pseudo.counts_per_class(k),
            alignment_steps: swd_steps,
            classifier_steps: cfg.alternations,
        };
        observer(&record, &model, &pseudo).map_err(|e| Error::io("<training observer>", e))?;
        log.records.push(record);
    }
    Ok((model, log))
}

//! Training loop: masked L1 regression loss on the tape, SGD with momentum,
//! per-epoch validation mAP, and checkpointing of the best parameters.

use crate::checkpoint::save_checkpoint;
use crate::cloud::Point3;
use crate::data::{make_sequence, Sample, SequenceDataset};
use crate::eval::{map_at_threshold, EvalReport, SkeletonFrame};
use crate::model::{accumulate_grads, build_forward, forward, HyperParams, ModelParams};
use crate::preprocess::{augment, center_sequence};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorId};
use crate::tokenizer::tokenize;
use crate::{Result, SpikeError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct TrainConfig<S: Scalar> {
    pub lr: S,
    pub momentum: S,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: bool,
    /// Restrict training/validation targets to each recording's final frame.
    pub final_frame_only: bool,
    pub map_threshold_m: f64,
    /// When set, the parameters with the best validation mAP are saved here.
    pub checkpoint_path: Option<PathBuf>,
    pub log: bool,
    /// Global cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    /// Stop once validation mAP reaches this value.
    pub target_val_map: Option<f64>,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        TrainConfig {
            lr: S::from_f64(0.01),
            momentum: S::from_f64(0.9),
            batch_size: 24,
            epochs: 10,
            seed: 0,
            augment: false,
            final_frame_only: false,
            map_threshold_m: 0.10,
            checkpoint_path: None,
            log: true,
            max_steps: None,
            target_val_map: None,
        }
    }
}

impl<S: Scalar> TrainConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(SpikeError::Config("batch_size and epochs must be >= 1".into()));
        }
        if self.lr < S::zero() || self.momentum < S::zero() || self.momentum >= S::one() {
            return Err(SpikeError::Config("need lr >= 0 and momentum in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_map: f64,
    pub wall_ms: u64,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        format!(
            "epoch={} loss={:.6} val_map={:.4} wall_ms={}",
            self.epoch, self.loss, self.val_map, self.wall_ms
        )
    }
}

pub struct TrainOutcome<S: Scalar> {
    pub params: ModelParams<S>,
    pub records: Vec<EpochRecord>,
    pub steps: usize,
}

/// Mean absolute error over valid joint coordinates: invalid joints carry
/// zero weight, valid ones 1/(3·n_valid), so the loss (and its gradient)
/// ignores missing annotations entirely.
pub fn l1_loss_masked<S: Scalar>(
    tape: &mut Tape<S>,
    pred: TensorId,
    target: &SkeletonFrame<S>,
) -> Result<TensorId> {
    l1_loss_masked_parts(tape, pred, &target.joints, &target.valid)
}

/// [`l1_loss_masked`] over explicit joint/validity slices, for heads with a
/// joint count other than the standard skeleton's.
pub fn l1_loss_masked_parts<S: Scalar>(
    tape: &mut Tape<S>,
    pred: TensorId,
    joints: &[Point3<S>],
    valid: &[bool],
) -> Result<TensorId> {
    let n = joints.len();
    if tape.shape(pred) != [n, 3] {
        return Err(SpikeError::Dimension(format!(
            "loss expects prediction shape [{n}, 3], got {:?}",
            tape.shape(pred)
        )));
    }
    let n_valid = valid.iter().filter(|v| **v).count();
    if n_valid == 0 {
        return Err(SpikeError::Data("loss target has no valid joints".into()));
    }
    let w = S::one() / S::from_usize_(3 * n_valid);
    let mut tgt = Vec::with_capacity(n * 3);
    let mut mask = Vec::with_capacity(n * 3);
    for j in 0..n {
        for k in 0..3 {
            tgt.push(joints[j][k]);
            mask.push(if valid[j] { w } else { S::zero() });
        }
    }
    let t_id = tape.leaf(Tensor::new(vec![n, 3], tgt)?);
    let m_id = tape.leaf(Tensor::new(vec![n, 3], mask)?);
    let diff = tape.sub(pred, t_id)?;
    let a = tape.abs(diff);
    let weighted = tape.mul_elem(a, m_id)?;
    Ok(tape.sum_all(weighted))
}

/// Momentum velocities, one buffer per parameter in declaration order.
pub struct SgdState<S: Scalar> {
    pub velocity: Vec<Vec<S>>,
}

impl<S: Scalar> SgdState<S> {
    pub fn new(params: &ModelParams<S>) -> Self {
        SgdState { velocity: params.params.iter().map(|p| vec![S::zero(); p.numel()]).collect() }
    }
}

/// v <- momentum*v + g, p <- p - lr*v, with grads scaled by `grad_scale`
/// (1/batch for accumulated batches). Zeroes the gradients afterwards.
pub fn sgd_step<S: Scalar>(
    params: &mut ModelParams<S>,
    state: &mut SgdState<S>,
    lr: S,
    momentum: S,
    grad_scale: S,
) -> Result<()> {
    for (p, v) in params.params.iter_mut().zip(&mut state.velocity) {
        for i in 0..p.data.len() {
            let g = p.grad[i] * grad_scale;
            if !g.is_finite() {
                return Err(SpikeError::Numeric(format!("non-finite gradient in parameter {}", p.name)));
            }
            v[i] = momentum * v[i] + g;
            p.data[i] = p.data[i] - lr * v[i];
            if !p.data[i].is_finite() {
                return Err(SpikeError::Numeric(format!("parameter {} became non-finite", p.name)));
            }
        }
    }
    params.zero_grads();
    Ok(())
}

fn mix_seed(a: u64, b: u64) -> u64 {
    a.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(b).rotate_left(17)
}

fn shift_frame<S: Scalar>(frame: &SkeletonFrame<S>, c: &Point3<S>) -> SkeletonFrame<S> {
    let joints = frame
        .joints
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    SkeletonFrame { joints: joints, valid: frame.valid.clone() }
}

/// Runs the model over `samples` of `ds` and scores mAP at `threshold_m`.
/// Each window is centered the same way as during training; targets are
/// shifted into the centered coordinates before comparison.
pub fn evaluate<S: Scalar>(
    ds: &SequenceDataset<S>,
    samples: &[Sample],
    hp: &HyperParams<S>,
    params: &ModelParams<S>,
    seed: u64,
    threshold_m: f64,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(SpikeError::Data("evaluate: no samples".into()));
    }
    let mut preds = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples.iter() {
        let rec = &ds.recordings[s.recording];
        let sseed = mix_seed(seed, (s.recording as u64) << 20 | s.t_index as u64);
        let (seq, target) = make_sequence(rec, s.t_index, hp, sseed)?;
        let (seq, c) = center_sequence(&seq)?;
        let out = forward(&seq, hp, params, sseed)?;
        preds.push(SkeletonFrame::new(out.joints, vec![true; target.joints.len()])?);
        targets.push(shift_frame(&target, &c));
    }
    map_at_threshold(&preds, &targets, threshold_m)
}

/// Full training loop. Validation mAP comes from `val_ds` when given, else
/// from the training set itself; the epoch log line format is stable:
/// `epoch=<int> loss=<float> val_map=<float> wall_ms=<int>`.
pub fn train<S: Scalar>(
    train_ds: &SequenceDataset<S>,
    val_ds: Option<&SequenceDataset<S>>,
    hp: &HyperParams<S>,
    cfg: &TrainConfig<S>,
) -> Result<TrainOutcome<S>> {
    hp.validate()?;
    cfg.validate()?;
    let samples = train_ds.samples(cfg.final_frame_only);
    if samples.is_empty() {
        return Err(SpikeError::Data("training set has no usable target frames".into()));
    }
    let val_set = val_ds.unwrap_or(train_ds);
    let val_samples = val_set.samples(cfg.final_frame_only);
    if val_samples.is_empty() {
        return Err(SpikeError::Data("validation set has no usable target frames".into()));
    }

    let mut params = ModelParams::init(hp, cfg.seed);
    let mut state = SgdState::new(&params);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;
    let mut best_map = f64::NEG_INFINITY;

    'epochs: for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let mut order = samples.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64)));
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            for (ci, s) in chunk.iter().enumerate() {
                let _ = ci;
                let sseed = mix_seed(cfg.seed, (s.recording as u64) << 20 | s.t_index as u64);
                let rec = &train_ds.recordings[s.recording];
                let (seq, target) = make_sequence(rec, s.t_index, hp, sseed)?;
                let (mut seq, c) = center_sequence(&seq)?;
                let mut target = shift_frame(&target, &c);
                if cfg.augment {
                    let aseed = mix_seed(mix_seed(sseed, 0xA06), epoch as u64);
                    let (aseq, atgt) = augment(&seq, &target, aseed);
                    seq = aseq;
                    target = atgt;
                }
                let tokens = tokenize(&seq, hp, sseed)?;
                let mut tape = Tape::new();
                let graph = build_forward(&mut tape, &seq, &tokens, hp, &params, true)?;
                let loss = l1_loss_masked(&mut tape, graph.output, &target)?;
                let lv = tape.data(loss)[0].as_f64();
                if !lv.is_finite() {
                    return Err(SpikeError::Numeric(format!("non-finite loss at epoch {epoch}")));
                }
                tape.backward(loss)?;
                accumulate_grads(&tape, &graph, &mut params);
                loss_sum += lv;
                loss_n += 1;
            }
            let scale = S::one() / S::from_usize_(chunk.len());
            sgd_step(&mut params, &mut state, cfg.lr, cfg.momentum, scale)?;
            steps += 1;
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
        }

        let report = evaluate(val_set, &val_samples, hp, &params, cfg.seed, cfg.map_threshold_m)?;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / loss_n.max(1) as f64,
            val_map: report.mean_ap,
            wall_ms: t0.elapsed().as_millis() as u64,
        };
        if cfg.log {
            println!("{}", record.log_line());
        }
        if let Some(path) = &cfg.checkpoint_path {
            if record.val_map > best_map {
                save_checkpoint(&params, hp, path)?;
            }
        }
        best_map = best_map.max(record.val_map);
        records.push(record);
        if cfg.target_val_map.is_some_and(|t| best_map >= t) {
            break 'epochs;
        }
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break 'epochs;
        }
    }

    Ok(TrainOutcome { params, records, steps })
}

use std::io::Write;

use log::{debug, info};
use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{make_pair_batch, BatchItem};
use crate::error::{Error, Result};
use crate::model::{inference_rppg, inference_rppg_backward, AdamW, AdamWConfig, Checkpoint, ModelConfig, StModel};
use crate::sampling::{
    loss_total_with_grad, sample_gt, sample_psds, sample_st, LossBreakdown, LossInputs, LossToggles, SamplerConfig,
};
use crate::scalar::Scalar;
use crate::signal::{ipr, pearson_with_grad, FreqBand, PsdOptions, Signal};
use crate::synth::{apply_desync, mask_labels, LabeledRecord};

/// Seed stream offsets; each consumer gets its own stream so that toggling
/// one feature never shifts the random draws of another.
const STREAM_LABELS: u64 = 1;
const STREAM_DESYNC: u64 = 2;
const STREAM_BATCH: u64 = 3;
const STREAM_GT: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: AdamWConfig,
    pub clip_len_s: f64,
    /// Pair batches per epoch; 0 means one per training video.
    pub steps_per_epoch: usize,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    pub toggles: LossToggles,
    /// Use every frequency bin instead of the heart-rate band in the loss.
    pub full_band: bool,
    pub label_ratio: f64,
    pub d_max_s: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            optimizer: AdamWConfig::default(),
            clip_len_s: 10.0,
            steps_per_epoch: 0,
            sampler: SamplerConfig::default(),
            model: ModelConfig::default(),
            toggles: LossToggles::default(),
            full_band: false,
            label_ratio: 0.0,
            d_max_s: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn psd_options(&self) -> PsdOptions {
        PsdOptions {
            band: if self.full_band {
                FreqBand::FULL
            } else {
                FreqBand::HEART_RATE
            },
            normalize: true,
        }
    }

    fn validate(&self, records: &[LabeledRecord]) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.label_ratio) || !(self.d_max_s >= 0.0) {
            return Err(Error::InvalidConfig(
                "label ratio must lie in [0, 1] and d_max be >= 0".into(),
            ));
        }
        let shortest = records
            .iter()
            .map(|r| r.video.duration_s())
            .fold(f64::INFINITY, f64::min);
        if self.clip_len_s > shortest + 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "clip length {} s exceeds the shortest video ({shortest} s)",
                self.clip_len_s
            )));
        }
        Ok(())
    }
}

/// One optimizer step of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_p_rr: f64,
    pub l_n_rr: f64,
    pub l_p_gr: f64,
    pub l_n_gr: f64,
    pub total: f64,
    /// Mean IPR of the two clips' predictions; absent when either is flat.
    pub ipr: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean IPR of full-length predictions on the training videos after the epoch.
    pub mean_ipr: f64,
    pub mean_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training-set IPR of the untrained model.
    pub initial_ipr: f64,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    /// `(T, S, S)` of the blocks produced during training.
    pub block_shape: (usize, usize, usize),
}

impl TrainLog {
    /// Per-step CSV: `step, l_p_rr, l_n_rr, l_p_gr, l_n_gr, total, ipr`.
    pub fn write_steps_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["step", "l_p_rr", "l_n_rr", "l_p_gr", "l_n_gr", "total", "ipr"])?;
        for s in &self.steps {
            wr.write_record([
                s.step.to_string(),
                s.l_p_rr.to_string(),
                s.l_n_rr.to_string(),
                s.l_p_gr.to_string(),
                s.l_n_gr.to_string(),
                s.total.to_string(),
                s.ipr.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub struct TrainOutput {
    /// One checkpoint per epoch, in order.
    pub checkpoints: Vec<Checkpoint>,
    pub log: TrainLog,
}

/// Applies label masking and desynchronization from `cfg` and replaces every
/// video by its face crop.
pub fn prepare_records(cfg: &TrainConfig, records: &[LabeledRecord]) -> Result<Vec<LabeledRecord>> {
    let masked = mask_labels(records.to_vec(), cfg.label_ratio, &mut stream(cfg.seed, STREAM_LABELS))?;
    let mut rng = stream(cfg.seed, STREAM_DESYNC);
    masked
        .into_iter()
        .map(|r| {
            let r = if r.phi && cfg.d_max_s > 0.0 {
                apply_desync(r, cfg.d_max_s, &mut rng)?
            } else {
                r
            };
            let video = r.cropped(cfg.model.input_size)?;
            Ok(LabeledRecord {
                video,
                truth: None,
                ..r
            })
        })
        .collect()
}

/// Mean IPR of whole-video predictions.
pub fn mean_ipr<T: Scalar>(model: &StModel<T>, cropped: &[LabeledRecord]) -> Result<f64> {
    let mut acc = 0.0;
    for r in cropped {
        acc += ipr(&inference_rppg(&model.forward_video(&r.video)?))?;
    }
    Ok(acc / cropped.len() as f64)
}

fn first_non_finite(b: &LossBreakdown) -> Option<&'static str> {
    [
        ("l_p_rr", b.l_p_rr),
        ("l_n_rr", b.l_n_rr),
        ("l_p_gr", b.l_p_gr),
        ("l_n_gr", b.l_n_gr),
        ("total", b.total),
    ]
    .into_iter()
    .find(|(_, v)| !v.is_finite())
    .map(|(n, _)| n)
}

fn add_grads<T: Scalar>(acc: &mut Option<Vec<Vec<T>>>, g: Vec<Vec<T>>) {
    match acc {
        None => *acc = Some(g),
        Some(a) => {
            for (x, y) in a.iter_mut().zip(g) {
                for (p, q) in x.iter_mut().zip(y) {
                    *p += q;
                }
            }
        }
    }
}

/// Loss and parameter gradients of one contrastive pair.
fn contrastive_step<T: Scalar>(
    model: &StModel<T>,
    items: &[BatchItem; 2],
    cfg: &TrainConfig,
    step: usize,
    rng: &mut ChaCha8Rng,
    gt_rng: &mut ChaCha8Rng,
) -> Result<(LossBreakdown, Vec<Vec<T>>, f64, (usize, usize, usize))> {
    let opts = cfg.psd_options();
    let mut tapes = Vec::with_capacity(2);
    let mut psd_sets = Vec::with_capacity(2);
    let mut gt_sets = Vec::with_capacity(2);
    let mut step_ipr = 0.0;
    let mut shape = (0, 0, 0);
    for it in items.iter() {
        let clip = it.clip.to_tensor::<T>(0, it.clip.len());
        let (block, tape) = model.forward_tape(&clip, it.clip.fps())?;
        shape = block.values().dim();
        step_ipr += ipr(&inference_rppg(&block)).unwrap_or(f64::NAN) / 2.0;
        let samples = sample_st(&block, it.record, &cfg.sampler, rng)?;
        let (psds, ptapes) = sample_psds(&samples, &opts)?;
        let gt_psds = match &it.gt {
            Some(gt) => {
                let gt: Signal<T> = gt.cast();
                let len = samples[0].trace.len();
                let g = sample_gt(&gt, it.record, samples.len(), len, gt_rng)?;
                Some(sample_psds(&g, &opts)?.0)
            }
            None => None,
        };
        tapes.push((block.s(), block.len(), tape, samples, ptapes));
        psd_sets.push(psds);
        gt_sets.push(gt_psds);
    }
    let inputs = LossInputs {
        f: &psd_sets[0],
        f_prime: &psd_sets[1],
        g: gt_sets[0].as_deref(),
        g_prime: gt_sets[1].as_deref(),
    };
    let (breakdown, grads) = loss_total_with_grad(&inputs, cfg.toggles)?;
    if let Some(term) = first_non_finite(&breakdown) {
        return Err(Error::NonFiniteLoss { step, term });
    }
    let mut total: Option<Vec<Vec<T>>> = None;
    for ((s, t, tape, samples, ptapes), g) in tapes.into_iter().zip([grads.f, grads.f_prime]) {
        let mut gb = Array3::<T>::zeros((t, s, s));
        for ((smp, pt), gpsd) in samples.iter().zip(&ptapes).zip(&g) {
            let gtrace = pt.backward(gpsd);
            let (h, w) = smp.origin.cell.expect("rPPG samples carry a cell");
            for (k, v) in gtrace.into_iter().enumerate() {
                gb[[smp.origin.start + k, h, w]] += v;
            }
        }
        let (pg, _) = model.backward(&tape, &gb, false);
        add_grads(&mut total, pg);
    }
    Ok((breakdown, total.expect("two clips"), step_ipr, shape))
}

fn run_training<T: Scalar, F>(
    cfg: &TrainConfig,
    records: &[LabeledRecord],
    pool: &[LabeledRecord],
    mut step_fn: F,
) -> Result<TrainOutput>
where
    F: FnMut(
        &StModel<T>,
        &[BatchItem; 2],
        usize,
        &mut ChaCha8Rng,
        &mut ChaCha8Rng,
    ) -> Result<(LossBreakdown, Vec<Vec<T>>, f64, (usize, usize, usize))>,
{
    let mut model = StModel::<T>::new(cfg.model.clone())?;
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut opt = AdamW::new(cfg.optimizer.clone(), &shapes);
    let mut rng = stream(cfg.seed, STREAM_BATCH);
    let mut gt_rng = stream(cfg.seed, STREAM_GT);
    let steps_per_epoch = if cfg.steps_per_epoch == 0 {
        records.len()
    } else {
        cfg.steps_per_epoch
    };
    let initial_ipr = mean_ipr(&model, records)?;
    info!("initial training IPR {initial_ipr:.4}");
    let mut log = TrainLog {
        initial_ipr,
        epochs: Vec::with_capacity(cfg.epochs),
        steps: Vec::new(),
        block_shape: (0, 0, 0),
    };
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut sum_total = 0.0;
        for _ in 0..steps_per_epoch {
            let items = make_pair_batch(pool, cfg.clip_len_s, &mut rng)?;
            let (b, grads, step_ipr, shape) = step_fn(&model, &items, step, &mut rng, &mut gt_rng)?;
            log.block_shape = shape;
            opt.step(&mut model.params_mut(), &grads)?;
            sum_total += b.total;
            log.steps.push(StepRecord {
                epoch,
                step,
                l_p_rr: b.l_p_rr,
                l_n_rr: b.l_n_rr,
                l_p_gr: b.l_p_gr,
                l_n_gr: b.l_n_gr,
                total: b.total,
                ipr: step_ipr.is_finite().then_some(step_ipr),
            });
            debug!("epoch {epoch} step {step}: total {:.5}", b.total);
            step += 1;
        }
        let mean_ipr = mean_ipr(&model, records)?;
        let mean_total = sum_total / steps_per_epoch as f64;
        info!("epoch {epoch}: mean loss {mean_total:.5}, training IPR {mean_ipr:.4}");
        log.epochs.push(EpochRecord {
            epoch,
            mean_ipr,
            mean_total,
        });
        checkpoints.push(Checkpoint::from_model(&model, epoch));
    }
    Ok(TrainOutput { checkpoints, log })
}

/// Contrastive training on `records` (label masking and desync per `cfg`).
pub fn train<T: Scalar>(cfg: &TrainConfig, records: &[LabeledRecord]) -> Result<TrainOutput> {
    cfg.validate(records)?;
    let prepared = prepare_records(cfg, records)?;
    run_training::<T, _>(cfg, &prepared, &prepared, |m, items, step, rng, gt_rng| {
        contrastive_step(m, items, cfg, step, rng, gt_rng)
    })
}

/// Checkpoint of the epoch with the lowest mean training IPR; ties go to the
/// earliest epoch.
pub fn select_model<'a>(checkpoints: &'a [Checkpoint], log: &TrainLog) -> Result<&'a Checkpoint> {
    let best = log
        .epochs
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, e)| match acc {
            Some((_, v)) if e.mean_ipr >= v => acc,
            _ => Some((i, e.mean_ipr)),
        })
        .ok_or_else(|| Error::InvalidInput("training log has no epochs".into()))?;
    checkpoints
        .get(best.0)
        .ok_or_else(|| Error::InvalidInput("fewer checkpoints than logged epochs".into()))
}

/// `1 - pearson_r(pred, gt)` and its gradient with respect to `pred`.
pub fn supervised_loss<T: Scalar>(pred: &[T], gt: &[T]) -> Result<(T, Vec<T>)> {
    let (r, gp, _) = pearson_with_grad(pred, gt)?;
    Ok((T::one() - r, gp.into_iter().map(|g| -g).collect()))
}

/// Loss and parameter gradients of the time-domain supervised baseline on
/// one clip.
pub fn baseline_supervised_step<T: Scalar>(
    model: &StModel<T>,
    clip: &Array4<T>,
    fps: f64,
    gt: &Signal<T>,
) -> Result<(T, Vec<Vec<T>>, f64)> {
    let (block, tape) = model.forward_tape(clip, fps)?;
    let pred = inference_rppg(&block);
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "GT has {} samples, clip {}",
            gt.len(),
            pred.len()
        )));
    }
    let (loss, g) = supervised_loss(pred.values(), gt.values())?;
    let gb = inference_rppg_backward(&g, block.s());
    let (grads, _) = model.backward(&tape, &gb, false);
    Ok((loss, grads, ipr(&pred).unwrap_or(f64::NAN)))
}

/// Trains the supervised comparator with the same schedule and optimizer;
/// batches are drawn from labeled videos only. The loss is logged in `total`.
pub fn train_baseline<T: Scalar>(cfg: &TrainConfig, records: &[LabeledRecord]) -> Result<TrainOutput> {
    cfg.validate(records)?;
    let prepared = prepare_records(cfg, records)?;
    let labeled: Vec<LabeledRecord> = prepared.iter().filter(|r| r.phi).cloned().collect();
    run_training::<T, _>(cfg, &prepared, &labeled, |m, items, step, _, _| {
        let mut total: Option<Vec<Vec<T>>> = None;
        let mut loss = 0.0;
        let mut step_ipr = 0.0;
        let mut shape = (0, 0, 0);
        for it in items {
            let clip = it.clip.to_tensor::<T>(0, it.clip.len());
            let gt: Signal<T> = it.gt.as_ref().expect("labeled pool").cast();
            let (l, mut g, ip) = baseline_supervised_step(m, &clip, it.clip.fps(), &gt)?;
            shape = (it.clip.len(), m.config().s, m.config().s);
            for t in g.iter_mut().flatten() {
                *t = *t / T::of(2.0);
            }
            add_grads(&mut total, g);
            loss += l.f64() / 2.0;
            step_ipr += ip / 2.0;
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, term: "total" });
        }
        let b = LossBreakdown {
            total: loss,
            ..LossBreakdown::default()
        };
        Ok((b, total.expect("two clips"), step_ipr, shape))
    })
}

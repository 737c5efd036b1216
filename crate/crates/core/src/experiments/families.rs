use log::info;
use serde::{Deserialize, Serialize};

use super::spec::{ExperimentSpec, Family};
use super::stats::{run_stats_validation, StatsResult};
use crate::error::{Error, Result};
use crate::model::{saliency_map, StModel};
use crate::signal::{detrend_standardize, Signal};
use crate::synth::{generate_corpus, LabeledRecord, SynthConfig};
use crate::train::{
    evaluate, select_model, train, train_baseline, EpochRecord, Estimator, EvalReport, ModelEstimator, TrainConfig,
    TrainLog,
};

/// Which loss columns stayed exactly zero over a whole run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroColumns {
    pub l_p_rr: bool,
    pub l_n_rr: bool,
    pub l_p_gr: bool,
    pub l_n_gr: bool,
}

impl ZeroColumns {
    pub fn from_log(log: &TrainLog) -> Self {
        let all = |f: fn(&crate::train::StepRecord) -> f64| log.steps.iter().all(|s| f(s) == 0.0);
        Self {
            l_p_rr: all(|s| s.l_p_rr),
            l_n_rr: all(|s| s.l_n_rr),
            l_p_gr: all(|s| s.l_p_gr),
            l_n_gr: all(|s| s.l_n_gr),
        }
    }
}

/// Standardized prediction and GT over the first evaluation window of a test video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub record: usize,
    pub fps: f64,
    pub rppg: Vec<f64>,
    pub gt: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub initial_ipr: f64,
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub block_shape: (usize, usize, usize),
    pub zero_columns: ZeroColumns,
    pub report: EvalReport,
    pub waveform: Option<Waveform>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub ratio: f64,
    pub run: RunSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesyncRow {
    pub d_max_s: f64,
    pub cp_plus: RunSummary,
    pub baseline: RunSummary,
}

/// Mean saliency inside the truth masks of the test videos.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyStats {
    pub mean_skin: f64,
    /// Absent when the corpus has no patch.
    pub mean_patch: Option<f64>,
    /// `mean_skin / mean_patch`.
    pub skin_to_patch: Option<f64>,
    /// Share of the total saliency inside the skin mask.
    pub skin_mass_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub record: usize,
    pub size: usize,
    /// Row-major `size x size` values.
    pub values: Vec<f64>,
    pub skin: Vec<bool>,
    pub patch: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyArm {
    pub run: RunSummary,
    pub stats: SaliencyStats,
    pub heatmaps: Vec<Heatmap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub with_noise: SaliencyArm,
    pub without: SaliencyArm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: String,
    pub s: usize,
    pub clip_len_s: f64,
    pub delta_t_s: f64,
    pub full_length: bool,
    pub full_band: bool,
    pub rr_neg: bool,
    pub gr_pos: bool,
    pub gr_neg: bool,
    pub label_ratio: f64,
    pub run: RunSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "rows", rename_all = "snake_case")]
pub enum ExperimentResults {
    LabelRatio(Vec<RatioRow>),
    Desync(Vec<DesyncRow>),
    Noise(Vec<NoiseRow>),
    Stats(Vec<StatsResult>),
    Ablation(Vec<AblationRow>),
    Saliency(Vec<SaliencyArm>),
}

impl ExperimentResults {
    pub fn family(&self) -> Family {
        match self {
            Self::LabelRatio(_) => Family::LabelRatio,
            Self::Desync(_) => Family::Desync,
            Self::Noise(_) => Family::Noise,
            Self::Stats(_) => Family::Stats,
            Self::Ablation(_) => Family::Ablation,
            Self::Saliency(_) => Family::Saliency,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::LabelRatio(r) => r.len(),
            Self::Desync(r) => r.len(),
            Self::Noise(r) => r.len(),
            Self::Stats(r) => r.len(),
            Self::Ablation(r) => r.len(),
            Self::Saliency(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Train and test split of a generated corpus.
pub fn split_corpus(spec: &ExperimentSpec, corpus: &SynthConfig) -> Result<(Vec<LabeledRecord>, Vec<LabeledRecord>)> {
    let mut all = generate_corpus(corpus)?;
    let test = all.split_off(spec.n_train());
    Ok((all, test))
}

fn waveform(model: &StModel<f32>, test: &[LabeledRecord], window_s: f64) -> Option<Waveform> {
    let rec = test.first()?;
    let len = ((window_s * rec.video.fps()).round() as usize).min(rec.video.len());
    let est = ModelEstimator { model }.estimate(rec, &[(0, len)]).ok()?.pop()?.ok()?;
    let gt = rec.gt_window(0, len).ok().flatten();
    let std = |s: &Signal<f64>| detrend_standardize(s).into_values();
    Some(Waveform {
        record: 0,
        fps: rec.video.fps(),
        rppg: std(&est),
        gt: gt.as_ref().map(std),
    })
}

/// Trains, selects by IPR, and evaluates one configuration; returns the
/// selected model too.
pub fn run_one(
    spec: &ExperimentSpec,
    cfg: &TrainConfig,
    trainset: &[LabeledRecord],
    testset: &[LabeledRecord],
    baseline: bool,
) -> Result<(RunSummary, StModel<f32>)> {
    let out = if baseline {
        train_baseline::<f32>(cfg, trainset)?
    } else {
        train::<f32>(cfg, trainset)?
    };
    let ckpt = select_model(&out.checkpoints, &out.log)?;
    let model: StModel<f32> = ckpt.to_model()?;
    let report = evaluate(&ModelEstimator { model: &model }, testset, &spec.eval)?;
    info!(
        "seed {} selected epoch {}: MAE {:?}, RMSE {:?}, SNR {:?}",
        cfg.seed, ckpt.epoch, report.mae, report.rmse, report.mean_snr_db
    );
    let summary = RunSummary {
        seed: cfg.seed,
        initial_ipr: out.log.initial_ipr,
        epochs: out.log.epochs.clone(),
        selected_epoch: ckpt.epoch,
        block_shape: out.log.block_shape,
        zero_columns: ZeroColumns::from_log(&out.log),
        report,
        waveform: waveform(&model, testset, spec.eval.window_s),
    };
    Ok((summary, model))
}

pub fn run_label_ratio(spec: &ExperimentSpec) -> Result<Vec<RatioRow>> {
    spec.validate(Family::LabelRatio)?;
    let (trainset, testset) = split_corpus(spec, &spec.corpus)?;
    let mut rows = Vec::new();
    for &ratio in &spec.label_ratios {
        for &seed in &spec.seeds {
            info!("label ratio {ratio}, seed {seed}");
            let cfg = TrainConfig {
                label_ratio: ratio,
                seed,
                ..spec.train.clone()
            };
            rows.push(RatioRow {
                ratio,
                run: run_one(spec, &cfg, &trainset, &testset, false)?.0,
            });
        }
    }
    Ok(rows)
}

/// Both methods train with every label present; only training labels are shifted.
pub fn run_desync(spec: &ExperimentSpec) -> Result<Vec<DesyncRow>> {
    spec.validate(Family::Desync)?;
    let (trainset, testset) = split_corpus(spec, &spec.corpus)?;
    let mut d_values = spec.d_max_s.clone();
    d_values.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    for d_max_s in d_values {
        for &seed in &spec.seeds {
            info!("d_max {d_max_s} s, seed {seed}");
            let cfg = TrainConfig {
                label_ratio: 1.0,
                d_max_s,
                seed,
                ..spec.train.clone()
            };
            rows.push(DesyncRow {
                d_max_s,
                cp_plus: run_one(spec, &cfg, &trainset, &testset, false)?.0,
                baseline: run_one(spec, &cfg, &trainset, &testset, true)?.0,
            });
        }
    }
    Ok(rows)
}

/// Saliency statistics and heatmaps of `model` on the test videos.
pub fn saliency_arm(model: &StModel<f32>, testset: &[LabeledRecord], run: RunSummary) -> Result<SaliencyArm> {
    let size = model.config().input_size;
    let (mut skin_sum, mut skin_n, mut patch_sum, mut patch_n, mut total) = (0.0, 0usize, 0.0, 0usize, 0.0);
    let mut has_patch = false;
    let mut heatmaps = Vec::with_capacity(testset.len());
    for (i, rec) in testset.iter().enumerate() {
        let (skin, patch) = rec
            .cropped_masks(size)?
            .ok_or_else(|| Error::InvalidInput("saliency needs truth masks".into()))?;
        let crop = rec.cropped(size)?;
        let gt = rec
            .gt_window(0, crop.len())?
            .ok_or_else(|| Error::MissingLabel(format!("test record {i}").into()))?;
        let map = saliency_map(model, &crop, &gt.cast::<f32>())?;
        let values: Vec<f64> = map.iter().map(|v| *v as f64).collect();
        for (k, &v) in values.iter().enumerate() {
            total += v;
            if skin[k] {
                skin_sum += v;
                skin_n += 1;
            }
            if let Some(p) = &patch {
                if p[k] {
                    patch_sum += v;
                    patch_n += 1;
                }
            }
        }
        has_patch |= patch.is_some();
        heatmaps.push(Heatmap {
            record: i,
            size,
            values,
            skin,
            patch,
        });
    }
    let mean_skin = skin_sum / skin_n.max(1) as f64;
    let mean_patch = (has_patch && patch_n > 0).then(|| patch_sum / patch_n as f64);
    let stats = SaliencyStats {
        mean_skin,
        mean_patch,
        skin_to_patch: mean_patch.filter(|p| *p > 0.0).map(|p| mean_skin / p),
        skin_mass_fraction: if total > 0.0 { skin_sum / total } else { 0.0 },
    };
    Ok(SaliencyArm { run, stats, heatmaps })
}

/// Unsupervised training on the corpus with and without the flashing patch.
pub fn run_noise(spec: &ExperimentSpec) -> Result<Vec<NoiseRow>> {
    spec.validate(Family::Noise)?;
    let arm = |enabled: bool, seed: u64| -> Result<SaliencyArm> {
        let mut corpus = spec.corpus.clone();
        corpus.patch.enabled = enabled;
        let (trainset, testset) = split_corpus(spec, &corpus)?;
        let cfg = TrainConfig {
            seed,
            ..spec.train.clone()
        };
        let (run, model) = run_one(spec, &cfg, &trainset, &testset, false)?;
        saliency_arm(&model, &testset, run)
    };
    spec.seeds
        .iter()
        .map(|&seed| {
            info!("noise arms, seed {seed}");
            Ok(NoiseRow {
                with_noise: arm(true, seed)?,
                without: arm(false, seed)?,
            })
        })
        .collect()
}

pub fn run_saliency(spec: &ExperimentSpec) -> Result<Vec<SaliencyArm>> {
    spec.validate(Family::Saliency)?;
    let (trainset, testset) = split_corpus(spec, &spec.corpus)?;
    spec.seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                ..spec.train.clone()
            };
            let (run, model) = run_one(spec, &cfg, &trainset, &testset, false)?;
            saliency_arm(&model, &testset, run)
        })
        .collect()
}

pub fn run_stats(spec: &ExperimentSpec) -> Result<Vec<StatsResult>> {
    spec.validate(Family::Stats)?;
    let records = generate_corpus(&spec.corpus)?;
    Ok(vec![run_stats_validation(&records, &spec.stats)?])
}

/// Named cells of the one-factor-at-a-time grid; configs equal to an earlier
/// cell are dropped.
pub fn ablation_cells(spec: &ExperimentSpec) -> Vec<(String, TrainConfig)> {
    let base = spec.train.clone();
    let g = &spec.ablation;
    let mut cells: Vec<(String, TrainConfig)> = vec![("base".into(), base.clone())];
    let mut push = |name: String, cfg: TrainConfig| {
        if !cells.iter().any(|(_, c)| *c == cfg) {
            cells.push((name, cfg));
        }
    };
    for &s in &g.spatial_sizes {
        let mut c = base.clone();
        c.model.s = s;
        push(format!("S={s}"), c);
    }
    for &t in &g.clip_lens_s {
        let mut c = base.clone();
        c.clip_len_s = t;
        c.sampler.delta_t_s = t / 2.0;
        push(format!("T={t}"), c);
    }
    for &f in &g.window_fracs {
        let mut c = base.clone();
        c.sampler.delta_t_s = f * base.clip_len_s;
        push(format!("dt={f}T"), c);
    }
    if g.observation_toggles {
        let mut c = base.clone();
        c.model.s = 1;
        push("spatial_off".into(), c);
        let mut c = base.clone();
        c.sampler.full_length = true;
        c.sampler.k = 1;
        push("temporal_off".into(), c);
        let mut c = base.clone();
        c.toggles.rr_neg = false;
        push("cross_video_off".into(), c);
        let mut c = base.clone();
        c.full_band = true;
        push("hr_range_off".into(), c);
    }
    if g.gt_toggles {
        let mut labeled = base.clone();
        labeled.label_ratio = g.gt_label_ratio;
        push("gt_both".into(), labeled.clone());
        let mut c = labeled.clone();
        c.toggles.gr_pos = false;
        push("gt_pos_off".into(), c);
        let mut c = labeled;
        c.toggles.gr_neg = false;
        push("gt_neg_off".into(), c);
    }
    cells
}

pub fn run_ablation(spec: &ExperimentSpec) -> Result<Vec<AblationRow>> {
    spec.validate(Family::Ablation)?;
    let (trainset, testset) = split_corpus(spec, &spec.corpus)?;
    let mut rows = Vec::new();
    for (cell, cfg) in ablation_cells(spec) {
        for &seed in &spec.seeds {
            info!("ablation cell {cell}, seed {seed}");
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let run = run_one(spec, &cfg, &trainset, &testset, false)?.0;
            rows.push(AblationRow {
                cell: cell.clone(),
                s: cfg.model.s,
                clip_len_s: cfg.clip_len_s,
                delta_t_s: cfg.sampler.delta_t_s,
                full_length: cfg.sampler.full_length,
                full_band: cfg.full_band,
                rr_neg: cfg.toggles.rr_neg,
                gr_pos: cfg.toggles.gr_pos,
                gr_neg: cfg.toggles.gr_neg,
                label_ratio: cfg.label_ratio,
                run,
            });
        }
    }
    Ok(rows)
}

/// Runs one experiment family.
pub fn run_family(family: Family, spec: &ExperimentSpec) -> Result<ExperimentResults> {
    Ok(match family {
        Family::LabelRatio => ExperimentResults::LabelRatio(run_label_ratio(spec)?),
        Family::Desync => ExperimentResults::Desync(run_desync(spec)?),
        Family::Noise => ExperimentResults::Noise(run_noise(spec)?),
        Family::Stats => ExperimentResults::Stats(run_stats(spec)?),
        Family::Ablation => ExperimentResults::Ablation(run_ablation(spec)?),
        Family::Saliency => ExperimentResults::Saliency(run_saliency(spec)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_cells_cover_toggles_once() {
        let spec = ExperimentSpec::default();
        let cells = ablation_cells(&spec);
        let names: Vec<&str> = cells.iter().map(|(n, _)| n.as_str()).collect();
        // S=2, T=10 and dt=0.5T coincide with the base config
        assert_eq!(
            names,
            [
                "base",
                "S=1",
                "S=4",
                "T=5",
                "dt=0.25T",
                "temporal_off",
                "cross_video_off",
                "hr_range_off",
                "gt_both",
                "gt_pos_off",
                "gt_neg_off"
            ]
        );
        let (_, c) = &cells[names.iter().position(|n| *n == "cross_video_off").unwrap()];
        assert!(!c.toggles.rr_neg && c.toggles.rr_pos);
        let full = ablation_cells(&spec.clone().full());
        assert!(full.iter().any(|(n, c)| n == "S=8" && c.model.s == 8));
        assert!(full.iter().any(|(n, c)| n == "T=30" && c.sampler.delta_t_s == 15.0));
    }
}

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{inference_rppg, StModel};
use crate::scalar::Scalar;
use crate::signal::{
    bandpass, compute_psd, detect_peaks, hr_from_psd, hrv_metrics, ipr, pearson_r, snr_db, FreqBand, HrvMetrics, Signal,
};
use crate::synth::LabeledRecord;

/// Anything that maps video windows to pulse estimates.
pub trait Estimator {
    /// One estimate per `(start, len)` frame window of `record`.
    fn estimate(&self, record: &LabeledRecord, windows: &[(usize, usize)]) -> Result<Vec<Result<Signal<f64>>>>;
}

/// Crops each video once and runs the network on every window.
pub struct ModelEstimator<'a, T> {
    pub model: &'a StModel<T>,
}

impl<T: Scalar> Estimator for ModelEstimator<'_, T> {
    fn estimate(&self, record: &LabeledRecord, windows: &[(usize, usize)]) -> Result<Vec<Result<Signal<f64>>>> {
        let crop = record.cropped(self.model.config().input_size)?;
        Ok(windows
            .iter()
            .map(|&(start, len)| {
                let clip = crop.to_tensor::<T>(start, len);
                let block = self.model.forward(&clip, crop.fps())?;
                Ok(inference_rppg(&block).cast())
            })
            .collect())
    }
}

/// Returns the ground truth itself; a perfect-oracle stub.
pub struct GtEstimator;

impl Estimator for GtEstimator {
    fn estimate(&self, record: &LabeledRecord, windows: &[(usize, usize)]) -> Result<Vec<Result<Signal<f64>>>> {
        Ok(windows
            .iter()
            .map(|&(s, l)| {
                record
                    .gt_window(s, l)?
                    .ok_or_else(|| Error::MissingLabel("record".into()))
            })
            .collect())
    }
}

/// Emits a constant trace.
pub struct ConstantEstimator(pub f64);

impl Estimator for ConstantEstimator {
    fn estimate(&self, record: &LabeledRecord, windows: &[(usize, usize)]) -> Result<Vec<Result<Signal<f64>>>> {
        Ok(windows
            .iter()
            .map(|&(_, l)| Signal::new(vec![self.0; l], record.video.fps()))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub window_s: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { window_s: 30.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub record: usize,
    pub start_s: f64,
    pub hr_ref: f64,
    pub hr_est: Option<f64>,
    pub snr_db: Option<f64>,
    pub ipr: Option<f64>,
    pub hrv_est: Option<HrvMetrics>,
    pub hrv_ref: Option<HrvMetrics>,
    /// Why the estimate (or one of its metrics) is missing.
    pub error: Option<String>,
}

/// Error statistics of one HRV feature over windows where both sides exist.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureError {
    pub n: usize,
    /// Standard deviation of the signed error.
    pub std: f64,
    pub rmse: f64,
    pub r: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrvErrors {
    pub lf_nu: Option<FeatureError>,
    pub hf_nu: Option<FeatureError>,
    pub lf_hf_ratio: Option<FeatureError>,
    pub rf_hz: Option<FeatureError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub windows: Vec<WindowResult>,
    /// Windows without an HR estimate.
    pub n_failed: usize,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub r: Option<f64>,
    pub mean_snr_db: Option<f64>,
    pub mean_ipr: Option<f64>,
    pub hrv: HrvErrors,
}

impl EvalReport {
    /// `(estimated, reference)` HR pairs of the successful windows.
    pub fn hr_pairs(&self) -> Vec<(f64, f64)> {
        self.windows
            .iter()
            .filter_map(|w| w.hr_est.map(|e| (e, w.hr_ref)))
            .collect()
    }

    pub fn write_windows_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["record", "start_s", "hr_ref", "hr_est", "snr_db", "ipr", "error"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for x in &self.windows {
            wr.write_record([
                x.record.to_string(),
                x.start_s.to_string(),
                x.hr_ref.to_string(),
                opt(x.hr_est),
                opt(x.snr_db),
                opt(x.ipr),
                x.error.clone().unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn hrv_of(s: &Signal<f64>) -> Result<HrvMetrics> {
    hrv_metrics(&detect_peaks(&bandpass(s, FreqBand::HEART_RATE))?)
}

fn feature_error(pairs: &[(f64, f64)]) -> Option<FeatureError> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let err: Vec<f64> = pairs.iter().map(|(e, r)| e - r).collect();
    let mean = err.iter().sum::<f64>() / n;
    let std = (err.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    let rmse = (err.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    Some(FeatureError {
        n: pairs.len(),
        std,
        rmse,
        r: pearson_r(&a, &b).ok(),
    })
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn reference(record: &LabeledRecord, start: usize, len: usize) -> Result<(f64, Option<Signal<f64>>)> {
    match record.gt_window(start, len)? {
        Some(gt) => Ok((hr_from_psd(&compute_psd(&gt, false)?)?, Some(gt))),
        None => match &record.truth {
            Some(t) => Ok((t.mean_hr(start, len), None)),
            None => Err(Error::MissingLabel("record without GT or truth metadata".into())),
        },
    }
}

/// Scores `est` on non-overlapping windows of every record.
pub fn evaluate<E: Estimator + ?Sized>(est: &E, records: &[LabeledRecord], cfg: &EvalConfig) -> Result<EvalReport> {
    let mut windows = Vec::new();
    for (ri, rec) in records.iter().enumerate() {
        let len = (cfg.window_s * rec.video.fps()).round() as usize;
        if len < 2 {
            return Err(Error::InvalidConfig(format!("evaluation window of {} s", cfg.window_s)));
        }
        let spans: Vec<(usize, usize)> = (0..rec.video.len() / len).map(|k| (k * len, len)).collect();
        if spans.is_empty() {
            continue;
        }
        let estimates = est.estimate(rec, &spans)?;
        for (&(start, len), sig) in spans.iter().zip(estimates) {
            let (hr_ref, gt) = reference(rec, start, len)?;
            let mut w = WindowResult {
                record: ri,
                start_s: start as f64 / rec.video.fps(),
                hr_ref,
                hr_est: None,
                snr_db: None,
                ipr: None,
                hrv_est: None,
                hrv_ref: gt.as_ref().and_then(|g| hrv_of(g).ok()),
                error: None,
            };
            let scored = sig.and_then(|s| {
                w.ipr = ipr(&s).ok();
                w.snr_db = snr_db(&s, hr_ref).ok();
                w.hr_est = Some(hr_from_psd(&compute_psd(&s, false)?)?);
                w.hrv_est = Some(hrv_of(&s)?);
                Ok(())
            });
            if let Err(e) = scored {
                w.error = Some(e.to_string());
            }
            windows.push(w);
        }
    }
    if windows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no complete {} s window in {} records",
            cfg.window_s,
            records.len()
        )));
    }
    Ok(summarize(windows))
}

/// Evaluates a network with the default protocol.
pub fn evaluate_model<T: Scalar>(model: &StModel<T>, records: &[LabeledRecord]) -> Result<EvalReport> {
    evaluate(&ModelEstimator { model }, records, &EvalConfig::default())
}

fn summarize(windows: Vec<WindowResult>) -> EvalReport {
    let pairs: Vec<(f64, f64)> = windows.iter().filter_map(|w| w.hr_est.map(|e| (e, w.hr_ref))).collect();
    let n_failed = windows.len() - pairs.len();
    let mae = mean(pairs.iter().map(|(e, r)| (e - r).abs()));
    let rmse = mean(pairs.iter().map(|(e, r)| (e - r).powi(2))).map(f64::sqrt);
    let r = if pairs.len() >= 2 {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        pearson_r(&a, &b).ok()
    } else {
        None
    };
    let feature = |f: fn(&HrvMetrics) -> f64| {
        let p: Vec<(f64, f64)> = windows
            .iter()
            .filter_map(|w| Some((f(w.hrv_est.as_ref()?), f(w.hrv_ref.as_ref()?))))
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .collect();
        feature_error(&p)
    };
    let hrv = HrvErrors {
        lf_nu: feature(|m| m.lf_nu),
        hf_nu: feature(|m| m.hf_nu),
        lf_hf_ratio: feature(|m| m.lf_hf_ratio),
        rf_hz: feature(|m| m.rf_hz),
    };
    EvalReport {
        mean_snr_db: mean(windows.iter().filter_map(|w| w.snr_db)),
        mean_ipr: mean(windows.iter().filter_map(|w| w.ipr)),
        windows,
        n_failed,
        mae,
        rmse,
        r,
        hrv,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, SynthConfig};

    fn corpus(n: usize, duration_s: f64) -> Vec<LabeledRecord> {
        generate_corpus(&SynthConfig {
            n_videos: n,
            duration_s,
            width: 24,
            height: 24,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn oracle_stub_is_perfect() {
        let recs = corpus(3, 30.0);
        let rep = evaluate(&GtEstimator, &recs, &EvalConfig::default()).unwrap();
        assert_eq!(rep.windows.len(), 3);
        assert_eq!(rep.n_failed, 0);
        assert_eq!(rep.mae, Some(0.0));
        assert!((rep.r.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rep.hrv.lf_nu.unwrap().rmse, 0.0);
    }

    #[test]
    fn constant_stub_flags_windows() {
        let recs = corpus(2, 30.0);
        let rep = evaluate(&ConstantEstimator(0.5), &recs, &EvalConfig::default()).unwrap();
        assert_eq!(rep.n_failed, 2);
        assert!(rep.mae.is_none() && rep.rmse.is_none());
        assert!(rep.windows.iter().all(|w| w.error.is_some()));
    }

    #[test]
    fn window_count_and_short_videos() {
        let recs = corpus(2, 65.0);
        let rep = evaluate(&GtEstimator, &recs, &EvalConfig::default()).unwrap();
        assert_eq!(rep.windows.len(), 4);
        let short = corpus(2, 20.0);
        assert!(matches!(
            evaluate(&GtEstimator, &short, &EvalConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn summary_bounds() {
        let mk = |e: f64, r: f64| WindowResult {
            record: 0,
            start_s: 0.0,
            hr_ref: r,
            hr_est: Some(e),
            snr_db: None,
            ipr: None,
            hrv_est: None,
            hrv_ref: None,
            error: None,
        };
        let rep = summarize(vec![mk(60.0, 62.0), mk(80.0, 74.0), mk(70.0, 70.0)]);
        assert!((rep.mae.unwrap() - 8.0 / 3.0).abs() < 1e-12);
        assert!((rep.rmse.unwrap() - (40.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(rep.rmse.unwrap() >= rep.mae.unwrap());
    }
}

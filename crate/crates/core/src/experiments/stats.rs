use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::StatsConfig;
use crate::error::{Error, Result};
use crate::signal::{compute_psd, Signal};
use crate::synth::LabeledRecord;

/// Terms of the asymptotic Kolmogorov series.
const KS_TERMS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsResult {
    pub intra_mse: Vec<f64>,
    pub cross_mse: Vec<f64>,
    pub ks_statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov statistic and its asymptotic p-value.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("KS test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("KS samples contain NaN".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let lambda = (na * nb / (na + nb)).sqrt() * d;
    Ok((d, kolmogorov_survival(lambda)))
}

/// `P(K > lambda)` for the Kolmogorov distribution; the alternating series
/// is accurate only away from zero, where the survival is 1 to double precision.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=KS_TERMS {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        p += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * p).clamp(0.0, 1.0)
}

fn psd_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Normalized heart-rate-band PSDs of `windows` random windows of every grid
/// cell's green-channel mean trace. The window starts depend only on the
/// config seed, so every video is sampled at the same positions.
fn video_psds(rec: &LabeledRecord, cfg: &StatsConfig) -> Result<Vec<Vec<f64>>> {
    let crop = rec.cropped(cfg.crop_size)?;
    let (t, h, w) = (crop.len(), crop.height(), crop.width());
    let len = (cfg.delta_t_s * crop.fps()).round() as usize;
    if len < 2 || len > t {
        return Err(Error::InvalidConfig(format!(
            "{} s window does not fit a {} s video",
            cfg.delta_t_s,
            crop.duration_s()
        )));
    }
    if cfg.grid > h.min(w) {
        return Err(Error::InvalidConfig(format!(
            "{0}x{0} grid on a {h}x{w} crop",
            cfg.grid
        )));
    }
    let frames = crop.frames();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.grid * cfg.grid * cfg.windows);
    for gy in 0..cfg.grid {
        for gx in 0..cfg.grid {
            let (y0, y1) = (gy * h / cfg.grid, (gy + 1) * h / cfg.grid);
            let (x0, x1) = (gx * w / cfg.grid, (gx + 1) * w / cfg.grid);
            let norm = ((y1 - y0) * (x1 - x0)) as f64;
            let trace: Vec<f64> = (0..t)
                .map(|ti| {
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc += frames[[ti, y, x, 1]] as f64;
                        }
                    }
                    acc / norm
                })
                .collect();
            for _ in 0..cfg.windows {
                let start = rng.random_range(0..=t - len);
                let s = Signal::new(trace[start..start + len].to_vec(), crop.fps())?;
                out.push(compute_psd(&s, true)?.power);
            }
        }
    }
    Ok(out)
}

/// PSD-MSE distributions of sample pairs from the same video and from
/// different videos, compared by a two-sample KS test.
///
/// Intra pairs are `(i, j)`, `i < j`, within a video; cross pairs are
/// `(a_i, b_j)`, `i < j`, for each pair of videos `a < b`. Using the same
/// index pattern makes the two distributions coincide on duplicated videos.
pub fn run_stats_validation(records: &[LabeledRecord], cfg: &StatsConfig) -> Result<StatsResult> {
    if records.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "statistical validation needs at least 2 videos, have {}",
            records.len()
        )));
    }
    let psds = records.iter().map(|r| video_psds(r, cfg)).collect::<Result<Vec<_>>>()?;
    let m = psds[0].len();
    if m < 2 {
        return Err(Error::InvalidConfig("need at least 2 samples per video".into()));
    }
    let mut intra = Vec::with_capacity(records.len() * m * (m - 1) / 2);
    let mut cross = Vec::new();
    for (va, pa) in psds.iter().enumerate() {
        for i in 0..m {
            for j in i + 1..m {
                intra.push(psd_mse(&pa[i], &pa[j]));
            }
        }
        for pb in &psds[va + 1..] {
            for i in 0..m {
                for j in i + 1..m {
                    cross.push(psd_mse(&pa[i], &pb[j]));
                }
            }
        }
    }
    let (ks_statistic, p_value) = two_sample_ks(&intra, &cross)?;
    Ok(StatsResult {
        intra_mse: intra,
        cross_mse: cross,
        ks_statistic,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_simple_cases() {
        let (d, p) = two_sample_ks(&[0.1, 0.2], &[0.8, 0.9]).unwrap();
        assert_eq!(d, 1.0);
        assert!(p < 1.0);
        let a = [0.3, 0.1, 0.7, 0.7];
        let (d, p) = two_sample_ks(&a, &a).unwrap();
        assert_eq!((d, p), (0.0, 1.0));
        assert!(matches!(two_sample_ks(&[], &a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn ks_ties_across_samples() {
        // ECDFs after 1.0: a = 2/3, b = 1/2; after 2.0 both are 1
        let (d, _) = two_sample_ks(&[1.0, 1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert!((d - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn survival_is_monotone() {
        let mut prev = 1.0;
        for i in 0..300 {
            let p = kolmogorov_survival(i as f64 * 0.01);
            assert!(p <= prev + 1e-15 && (0.0..=1.0).contains(&p));
            prev = p;
        }
        assert!((kolmogorov_survival(1.36) - 0.0494).abs() < 1e-3);
    }

    #[test]
    fn single_video_rejected() {
        let recs = crate::synth::generate_corpus(&crate::synth::SynthConfig {
            n_videos: 1,
            duration_s: 10.0,
            width: 32,
            height: 32,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(
            run_stats_validation(&recs, &StatsConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }
}

use serde::{Deserialize, Serialize};

use super::spectrum::{periodogram, FreqBand};
use crate::error::{Error, Result};

pub const LF_BAND: FreqBand = FreqBand {
    lo_hz: 0.04,
    hi_hz: 0.15,
};
pub const HF_BAND: FreqBand = FreqBand {
    lo_hz: 0.15,
    hi_hz: 0.4,
};

const RESAMPLE_HZ: f64 = 4.0;
const MIN_FFT_LEN: usize = 1024;

/// Frequency-domain heart rate variability features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrvMetrics {
    /// LF power in normalized units, LF / (LF + HF).
    pub lf_nu: f64,
    /// HF power in normalized units, HF / (LF + HF).
    pub hf_nu: f64,
    pub lf_hf_ratio: f64,
    /// Respiration frequency: HF-band spectral peak (Hz).
    pub rf_hz: f64,
}

/// HRV features from peak times (s).
///
/// Interbeat intervals are linearly interpolated onto a uniform 4 Hz grid,
/// detrended, zero-padded and transformed; LF is `[0.04, 0.15)` Hz and HF is
/// `[0.15, 0.4]` Hz.
pub fn hrv_metrics(peak_times: &[f64]) -> Result<HrvMetrics> {
    if peak_times.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "HRV needs at least 8 peaks, got {}",
            peak_times.len()
        )));
    }
    if peak_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("peak times must be strictly increasing".into()));
    }
    let ibi_t: Vec<f64> = peak_times[1..].to_vec();
    let ibi: Vec<f64> = peak_times.windows(2).map(|w| w[1] - w[0]).collect();

    let t0 = ibi_t[0];
    let span = ibi_t[ibi_t.len() - 1] - t0;
    let n = (span * RESAMPLE_HZ).floor() as usize + 1;
    if n < 4 {
        return Err(Error::InsufficientData("interbeat series too short to resample".into()));
    }
    let mut series = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let t = t0 + i as f64 / RESAMPLE_HZ;
        while j + 2 < ibi_t.len() && ibi_t[j + 1] < t {
            j += 1;
        }
        let (ta, tb) = (ibi_t[j], ibi_t[j + 1]);
        let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        series.push(ibi[j] + w * (ibi[j + 1] - ibi[j]));
    }

    let mean_ibi = series.iter().sum::<f64>() / n as f64;
    let detrended = remove_line(&series);
    let rms = (detrended.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms <= 1e-9 * mean_ibi {
        return Err(Error::DegenerateVariability);
    }

    let nfft = (4 * n).next_power_of_two().max(MIN_FFT_LEN);
    let mut padded = detrended;
    padded.resize(nfft, 0.0);
    let (freqs, power) = periodogram(&padded, RESAMPLE_HZ);

    let (mut lf, mut hf) = (0.0, 0.0);
    let mut rf = (0.0, f64::NEG_INFINITY);
    for (&f, &p) in freqs.iter().zip(&power) {
        if f >= LF_BAND.lo_hz && f < LF_BAND.hi_hz {
            lf += p;
        } else if f >= HF_BAND.lo_hz && f <= HF_BAND.hi_hz {
            hf += p;
            if p > rf.1 {
                rf = (f, p);
            }
        }
    }
    let total = lf + hf;
    if total <= 1e-12 * rms * rms {
        return Err(Error::DegenerateVariability);
    }
    Ok(HrvMetrics {
        lf_nu: lf / total,
        hf_nu: hf / total,
        lf_hf_ratio: if hf > 0.0 { lf / hf } else { f64::INFINITY },
        rf_hz: rf.0,
    })
}

fn remove_line(y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let d = i as f64 - tm;
        sxy += d * (v - ym);
        sxx += d * d;
    }
    let b = sxy / sxx;
    y.iter()
        .enumerate()
        .map(|(i, &v)| v - ym - b * (i as f64 - tm))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Beat times whose intervals follow `ibi(t)` evaluated at the previous beat.
    fn beats(secs: f64, ibi: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut t = 0.5;
        let mut out = vec![t];
        while t < secs {
            t += ibi(t);
            out.push(t);
        }
        out
    }

    /// Band sums straight from the analytically constructed IBI series.
    fn band_share(peaks: &[f64], band: FreqBand) -> f64 {
        let ibi_t = &peaks[1..];
        let ibi: Vec<f64> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
        let n = ((ibi_t[ibi_t.len() - 1] - ibi_t[0]) * 4.0) as usize + 1;
        let grid: Vec<f64> = (0..n)
            .map(|i| {
                let t = ibi_t[0] + i as f64 / 4.0;
                let j = ibi_t.iter().rposition(|&x| x <= t).unwrap().min(ibi.len() - 2);
                let w = ((t - ibi_t[j]) / (ibi_t[j + 1] - ibi_t[j])).clamp(0.0, 1.0);
                ibi[j] + w * (ibi[j + 1] - ibi[j])
            })
            .collect();
        let y = remove_line(&grid);
        let m = 4096;
        let mut sums = (0.0, 0.0);
        for k in 1..m / 2 {
            let f = k as f64 * 4.0 / m as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in y.iter().enumerate() {
                let th = 2.0 * PI * f * j as f64 / 4.0;
                re += v * th.cos();
                im -= v * th.sin();
            }
            let p = re * re + im * im;
            if f >= 0.04 && f <= 0.4 {
                sums.1 += p;
                if f >= band.lo_hz && f <= band.hi_hz {
                    sums.0 += p;
                }
            }
        }
        sums.0 / sums.1
    }

    #[test]
    fn constant_intervals_are_degenerate() {
        let peaks: Vec<f64> = (0..40).map(|i| 0.3 + 0.8 * i as f64).collect();
        assert!(matches!(hrv_metrics(&peaks), Err(Error::DegenerateVariability)));
    }

    #[test]
    fn too_few_peaks() {
        let peaks: Vec<f64> = (0..7).map(|i| i as f64).collect();
        assert!(matches!(hrv_metrics(&peaks), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn respiratory_modulation_is_hf() {
        let peaks = beats(120.0, |t| 0.8 + 0.05 * (2.0 * PI * 0.30 * t).sin());
        let m = hrv_metrics(&peaks).unwrap();
        assert!(m.hf_nu > 0.9, "{m:?}");
        assert!((m.rf_hz - 0.30).abs() <= 0.05, "{m:?}");
        assert!((m.lf_nu + m.hf_nu - 1.0).abs() < 1e-9);
        assert!(band_share(&peaks, HF_BAND) > 0.9);
    }

    #[test]
    fn slow_modulation_is_lf() {
        let peaks = beats(180.0, |t| 0.9 + 0.06 * (2.0 * PI * 0.10 * t).sin());
        let m = hrv_metrics(&peaks).unwrap();
        assert!(m.lf_nu > 0.9, "{m:?}");
        assert!((m.lf_hf_ratio - m.lf_nu / m.hf_nu).abs() < 1e-9 * m.lf_hf_ratio);
        assert!(band_share(&peaks, LF_BAND) > 0.9);
    }
}

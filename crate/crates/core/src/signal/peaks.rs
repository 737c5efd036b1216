use super::Signal;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Systolic peak detector: local maxima above a rolling `mean + k * std`
/// threshold, separated by a refractory period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeakDetector {
    /// Width of the centered rolling window for the threshold (s).
    pub window_s: f64,
    /// Multiplier on the rolling standard deviation.
    pub k_std: f64,
    /// Minimum spacing between accepted peaks (s); 60/250 bpm.
    pub refractory_s: f64,
    /// Minimum signal duration (s).
    pub min_duration_s: f64,
}

impl Default for PeakDetector {
    fn default() -> Self {
        Self {
            window_s: 2.0,
            k_std: 0.3,
            refractory_s: 60.0 / 250.0,
            min_duration_s: 5.0,
        }
    }
}

impl PeakDetector {
    /// Rolling threshold per sample, computed from prefix sums.
    pub fn threshold<T: Scalar>(&self, s: &Signal<T>) -> Vec<f64> {
        let x: Vec<f64> = s.values().iter().map(|v| v.f64()).collect();
        let n = x.len();
        let half = ((self.window_s * s.fps()) / 2.0).round() as usize;
        let mut s1 = vec![0.0; n + 1];
        let mut s2 = vec![0.0; n + 1];
        for i in 0..n {
            s1[i + 1] = s1[i] + x[i];
            s2[i + 1] = s2[i] + x[i] * x[i];
        }
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(n);
                let m = (hi - lo) as f64;
                let mean = (s1[hi] - s1[lo]) / m;
                let var = ((s2[hi] - s2[lo]) / m - mean * mean).max(0.0);
                mean + self.k_std * var.sqrt()
            })
            .collect()
    }

    pub fn detect<T: Scalar>(&self, s: &Signal<T>) -> Result<Vec<f64>> {
        if s.duration_s() + 1e-9 < self.min_duration_s {
            return Err(Error::InsufficientData(format!(
                "peak detection needs at least {} s, got {:.3} s",
                self.min_duration_s,
                s.duration_s()
            )));
        }
        let x: Vec<f64> = s.values().iter().map(|v| v.f64()).collect();
        let thr = self.threshold(s);
        let refractory = self.refractory_s * s.fps();
        let mut accepted: Vec<usize> = Vec::new();
        for i in 1..x.len() - 1 {
            if !(x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > thr[i]) {
                continue;
            }
            match accepted.last_mut() {
                Some(last) if ((i - *last) as f64) < refractory => {
                    if x[i] > x[*last] {
                        *last = i;
                    }
                }
                _ => accepted.push(i),
            }
        }
        Ok(accepted
            .into_iter()
            .map(|i| (i as f64 + parabolic_offset(x[i - 1], x[i], x[i + 1])) / s.fps())
            .collect())
    }
}

/// Vertex offset of the parabola through three equally spaced samples.
fn parabolic_offset(a: f64, b: f64, c: f64) -> f64 {
    let den = a - 2.0 * b + c;
    if den.abs() < 1e-300 {
        0.0
    } else {
        (0.5 * (a - c) / den).clamp(-0.5, 0.5)
    }
}

/// Peak times (s) with the default detector.
pub fn detect_peaks<T: Scalar>(s: &Signal<T>) -> Result<Vec<f64>> {
    PeakDetector::default().detect(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(f: f64, secs: f64, fps: f64, amp: impl Fn(f64) -> f64) -> Signal<f64> {
        let n = (secs * fps) as usize;
        Signal::new(
            (0..n)
                .map(|i| {
                    let t = i as f64 / fps;
                    amp(t) * (2.0 * PI * f * t).sin()
                })
                .collect(),
            fps,
        )
        .unwrap()
    }

    #[test]
    fn one_hertz_sine_gives_thirty_peaks() {
        let peaks = detect_peaks(&sine(1.0, 30.0, 30.0, |_| 1.0)).unwrap();
        assert_eq!(peaks.len(), 30);
        for w in peaks.windows(2) {
            assert!((w[1] - w[0] - 1.0).abs() <= 0.04);
        }
    }

    #[test]
    fn constant_has_no_peaks() {
        let s = Signal::new(vec![1.0f64; 300], 30.0).unwrap();
        assert!(detect_peaks(&s).unwrap().is_empty());
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(detect_peaks(&sine(1.0, 3.0, 30.0, |_| 1.0)).is_err());
    }

    /// Brute force: naive window statistics, then a local-maximum scan with
    /// the same acceptance rule.
    fn oracle_count(s: &Signal<f64>) -> usize {
        let x = s.values();
        let n = x.len();
        let half = (s.fps()).round() as usize;
        let thr: Vec<f64> = (0..n)
            .map(|i| {
                let w: Vec<f64> = x[i.saturating_sub(half)..(i + half + 1).min(n)].to_vec();
                let m = w.iter().sum::<f64>() / w.len() as f64;
                let v = w.iter().map(|a| (a - m).powi(2)).sum::<f64>() / w.len() as f64;
                m + 0.3 * v.sqrt()
            })
            .collect();
        let cands: Vec<usize> = (1..n - 1)
            .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > thr[i])
            .collect();
        let mut kept: Vec<usize> = Vec::new();
        for c in cands {
            if let Some(&l) = kept.last() {
                if ((c - l) as f64) < 0.24 * s.fps() {
                    if x[c] > x[l] {
                        kept.pop();
                        kept.push(c);
                    }
                    continue;
                }
            }
            kept.push(c);
        }
        kept.len()
    }

    #[test]
    fn amplitude_dip_matches_brute_force() {
        let s = sine(1.1, 20.0, 30.0, |t| 1.0 - 0.85 * (-((t - 10.0) / 0.8).powi(2)).exp());
        assert_eq!(detect_peaks(&s).unwrap().len(), oracle_count(&s));
    }

    #[test]
    fn peaks_are_strictly_increasing() {
        let s = sine(2.3, 12.0, 25.0, |t| 1.0 + 0.3 * (0.7 * t).sin());
        let p = detect_peaks(&s).unwrap();
        assert!(p.windows(2).all(|w| w[1] > w[0]));
    }
}

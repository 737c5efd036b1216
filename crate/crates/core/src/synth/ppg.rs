use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Signal;

/// Largest admissible heart-rate slew (bpm/s).
pub const MAX_HR_SLOPE_BPM_PER_S: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrComponent {
    pub amp_bpm: f64,
    pub freq_hz: f64,
    pub phase: f64,
}

/// Instantaneous heart rate: `base + slope * t + sum of sinusoidal terms`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrProfile {
    pub base_bpm: f64,
    pub slope_bpm_per_s: f64,
    pub components: Vec<HrComponent>,
}

impl HrProfile {
    pub fn constant(bpm: f64) -> Self {
        Self {
            base_bpm: bpm,
            slope_bpm_per_s: 0.0,
            components: Vec::new(),
        }
    }

    pub fn linear(start_bpm: f64, end_bpm: f64, duration_s: f64) -> Self {
        Self {
            base_bpm: start_bpm,
            slope_bpm_per_s: (end_bpm - start_bpm) / duration_s,
            components: Vec::new(),
        }
    }

    pub fn bpm_at(&self, t: f64) -> f64 {
        self.base_bpm
            + self.slope_bpm_per_s * t
            + self
                .components
                .iter()
                .map(|c| c.amp_bpm * (2.0 * PI * c.freq_hz * t + c.phase).sin())
                .sum::<f64>()
    }

    /// Samples the profile on the frame grid `t = i / fps`.
    pub fn sample(&self, n: usize, fps: f64) -> Vec<f64> {
        (0..n).map(|i| self.bpm_at(i as f64 / fps)).collect()
    }

    fn validate(&self, n: usize, fps: f64) -> Result<Vec<f64>> {
        let hr = self.sample(n, fps);
        if let Some((i, v)) = hr.iter().enumerate().find(|(_, v)| !(40.0..=250.0).contains(*v)) {
            return Err(Error::InvalidProfile(format!(
                "{v:.2} bpm at t = {:.3} s is outside [40, 250]",
                i as f64 / fps
            )));
        }
        if let Some(i) = (1..n).find(|&i| (hr[i] - hr[i - 1]).abs() * fps > MAX_HR_SLOPE_BPM_PER_S + 1e-9) {
            return Err(Error::InvalidProfile(format!(
                "heart rate changes faster than {MAX_HR_SLOPE_BPM_PER_S} bpm/s at t = {:.3} s",
                i as f64 / fps
            )));
        }
        Ok(hr)
    }
}

/// Quasi-periodic pulse waveform: harmonics of the phase-integrated
/// instantaneous heart rate, standardized to zero mean and unit variance.
///
/// `harmonics[h]` is the amplitude of harmonic `h + 1`; each harmonic gets a
/// random phase from `rng`.
pub fn generate_ppg<R: Rng + ?Sized>(
    duration_s: f64,
    fps: f64,
    profile: &HrProfile,
    harmonics: &[f64],
    rng: &mut R,
) -> Result<Signal<f64>> {
    if !(fps > 0.0 && duration_s > 0.0) {
        return Err(Error::InvalidInput("duration and fps must be positive".into()));
    }
    if harmonics.is_empty() || harmonics.iter().all(|&a| a == 0.0) {
        return Err(Error::InvalidInput("at least one non-zero harmonic is required".into()));
    }
    let n = (duration_s * fps).round() as usize;
    let hr = profile.validate(n, fps)?;
    let phases: Vec<f64> = harmonics.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mut phi = 0.0;
    let mut x = Vec::with_capacity(n);
    for bpm in &hr {
        let v: f64 = harmonics
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(h, (&a, &p))| a * ((h + 1) as f64 * phi + p).sin())
            .sum();
        x.push(v);
        phi += 2.0 * PI * bpm / 60.0 / fps;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    Signal::new(x.into_iter().map(|v| (v - mean) / sd).collect(), fps)
}

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{condition, condition_backward, Signal, Trend};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Half width of the rectangular SNR windows around the fundamental and the
/// first harmonic.
pub const SNR_HALF_WINDOW_HZ: f64 = 0.2;
/// SNR values are clamped to `[-SNR_CAP_DB, SNR_CAP_DB]`.
pub const SNR_CAP_DB: f64 = 60.0;

const EDGE_TOL_HZ: f64 = 1e-9;

/// Closed frequency interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreqBand {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl FreqBand {
    /// Plausible heart-rate range, 40 to 250 bpm.
    pub const HEART_RATE: FreqBand = FreqBand {
        lo_hz: 0.66,
        hi_hz: 4.16,
    };

    /// Every bin from DC to Nyquist.
    pub const FULL: FreqBand = FreqBand {
        lo_hz: 0.0,
        hi_hz: f64::INFINITY,
    };

    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo_hz - EDGE_TOL_HZ && f <= self.hi_hz + EDGE_TOL_HZ
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdOptions {
    pub band: FreqBand,
    pub normalize: bool,
}

impl Default for PsdOptions {
    fn default() -> Self {
        Self {
            band: FreqBand::HEART_RATE,
            normalize: true,
        }
    }
}

/// Band-restricted power spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct Psd<T> {
    pub power: Vec<T>,
    pub freqs: Vec<f64>,
}

impl<T: Scalar> Psd<T> {
    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn total(&self) -> T {
        self.power.iter().copied().sum()
    }
}

fn fft_forward<T: Scalar>(x: &[T]) -> Vec<Complex<T>> {
    let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// One-sided periodogram of `x` exactly as given (no conditioning). Scaled
/// so that the bins sum to the mean square of `x`.
pub fn periodogram<T: Scalar>(x: &[T], fps: f64) -> (Vec<f64>, Vec<T>) {
    let n = x.len();
    let spec = fft_forward(x);
    let norm = T::of_usize(n) * T::of_usize(n);
    let half = n / 2;
    let mut freqs = Vec::with_capacity(half + 1);
    let mut power = Vec::with_capacity(half + 1);
    for (k, c) in spec.iter().enumerate().take(half + 1) {
        freqs.push(k as f64 * fps / n as f64);
        power.push(one_sided_weight::<T>(k, n) * c.norm_sqr() / norm);
    }
    (freqs, power)
}

fn one_sided_weight<T: Scalar>(k: usize, n: usize) -> T {
    if k == 0 || (n % 2 == 0 && k == n / 2) {
        T::one()
    } else {
        T::of(2.0)
    }
}

/// Intermediate state of a PSD evaluation, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PsdTape<T> {
    conditioned: Vec<T>,
    sigma: T,
    spectrum: Vec<Complex<T>>,
    bins: Vec<usize>,
    normalized: Vec<T>,
    total: T,
    normalize: bool,
}

/// Periodogram of the mean-removed, unit-variance input restricted to
/// `opts.band`, with the state needed to differentiate it.
///
/// Only the mean is removed: a least-squares line fit would leak a ramp into
/// every bin of a periodic input.
pub fn psd_with_tape<T: Scalar>(x: &[T], fps: f64, opts: &PsdOptions) -> Result<(Psd<T>, PsdTape<T>)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidInput("PSD needs at least 2 samples".into()));
    }
    let (conditioned, sigma) = condition(x, Trend::Mean);
    let spectrum = fft_forward(&conditioned);
    let norm = T::of_usize(n) * T::of_usize(n);
    let mut bins = Vec::new();
    let mut freqs = Vec::new();
    let mut power = Vec::new();
    for k in 0..=n / 2 {
        let f = k as f64 * fps / n as f64;
        if opts.band.contains(f) {
            bins.push(k);
            freqs.push(f);
            power.push(one_sided_weight::<T>(k, n) * spectrum[k].norm_sqr() / norm);
        }
    }
    if bins.len() < 3 {
        return Err(Error::Resolution { bins: bins.len() });
    }
    let total: T = power.iter().copied().sum();
    let normalized = if opts.normalize {
        if total <= T::zero() {
            return Err(Error::InvalidInput(
                "cannot normalize a PSD with zero in-band power".into(),
            ));
        }
        power.iter().map(|&p| p / total).collect()
    } else {
        power.clone()
    };
    let psd = Psd {
        power: normalized.clone(),
        freqs,
    };
    let tape = PsdTape {
        conditioned,
        sigma,
        spectrum,
        bins,
        normalized,
        total,
        normalize: opts.normalize,
    };
    Ok((psd, tape))
}

impl<T: Scalar> PsdTape<T> {
    /// Gradient with respect to the raw input samples given the gradient with
    /// respect to the returned PSD bins.
    pub fn backward(&self, grad: &[T]) -> Vec<T> {
        assert_eq!(grad.len(), self.bins.len(), "PSD gradient length");
        let n = self.conditioned.len();
        let g_pow: Vec<T> = if self.normalize {
            let dot = grad.iter().zip(&self.normalized).map(|(&g, &p)| g * p).sum::<T>();
            grad.iter().map(|&g| (g - dot) / self.total).collect()
        } else {
            grad.to_vec()
        };
        let norm = T::of_usize(n) * T::of_usize(n);
        let mut g_spec = vec![Complex::new(T::zero(), T::zero()); n];
        for (&k, &g) in self.bins.iter().zip(&g_pow) {
            let coef = T::of(2.0) * one_sided_weight::<T>(k, n) * g / norm;
            g_spec[k] = self.spectrum[k] * coef;
        }
        // d|X_k|^2 / ds_n pulls back through the DFT as Re(sum_k G_k e^{+i 2 pi k n / N})
        FftPlanner::new().plan_fft_inverse(n).process(&mut g_spec);
        let g_s: Vec<T> = g_spec.iter().map(|c| c.re).collect();
        condition_backward(&self.conditioned, self.sigma, &g_s, Trend::Mean)
    }
}

/// Heart-rate-band PSD of the centered, standardized signal.
pub fn compute_psd<T: Scalar>(s: &Signal<T>, normalize: bool) -> Result<Psd<T>> {
    let opts = PsdOptions {
        band: FreqBand::HEART_RATE,
        normalize,
    };
    Ok(psd_with_tape(s.values(), s.fps(), &opts)?.0)
}

/// Heart rate in bpm at the maximal bin; ties go to the lower frequency.
pub fn hr_from_psd<T: Scalar>(p: &Psd<T>) -> Result<f64> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in p.power.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    match best {
        Some((i, v)) if v > T::zero() => Ok(60.0 * p.freqs[i]),
        _ => Err(Error::NoPeak),
    }
}

/// Spectral SNR in dB: power within `SNR_HALF_WINDOW_HZ` of the reference
/// fundamental and first harmonic against the remaining heart-rate-band
/// power. Clamped to `±SNR_CAP_DB`.
pub fn snr_db<T: Scalar>(rppg: &Signal<T>, gt_hr_bpm: f64) -> Result<f64> {
    if !(40.0..=250.0).contains(&gt_hr_bpm) {
        return Err(Error::InvalidInput(format!(
            "reference heart rate {gt_hr_bpm} bpm outside [40, 250]"
        )));
    }
    let psd = compute_psd(rppg, false)?;
    let f0 = gt_hr_bpm / 60.0;
    let (mut sig, mut noise) = (0.0, 0.0);
    for (&f, &p) in psd.freqs.iter().zip(&psd.power) {
        let in_window = (f - f0).abs() <= SNR_HALF_WINDOW_HZ + EDGE_TOL_HZ
            || (f - 2.0 * f0).abs() <= SNR_HALF_WINDOW_HZ + EDGE_TOL_HZ;
        if in_window {
            sig += p.f64();
        } else {
            noise += p.f64();
        }
    }
    let db = if noise <= 0.0 {
        SNR_CAP_DB
    } else if sig <= 0.0 {
        -SNR_CAP_DB
    } else {
        10.0 * (sig / noise).log10()
    };
    Ok(db.clamp(-SNR_CAP_DB, SNR_CAP_DB))
}

/// Irrelevant power ratio: share of the non-DC periodogram power that lies
/// outside the heart-rate band. Lower is better.
pub fn ipr<T: Scalar>(s: &Signal<T>) -> Result<f64> {
    let n = T::of_usize(s.len());
    let mean = s.values().iter().copied().sum::<T>() / n;
    let centered: Vec<T> = s.values().iter().map(|&v| v - mean).collect();
    let (freqs, power) = periodogram(&centered, s.fps());
    let (mut total, mut inband) = (0.0, 0.0);
    for (&f, &p) in freqs.iter().zip(&power).skip(1) {
        total += p.f64();
        if FreqBand::HEART_RATE.contains(f) {
            inband += p.f64();
        }
    }
    if total <= 0.0 {
        return Err(Error::InvalidInput("IPR of a signal with zero AC power".into()));
    }
    Ok(((total - inband) / total).clamp(0.0, 1.0))
}

/// Zero-phase FFT band-pass: bins outside `band` are zeroed.
pub fn bandpass<T: Scalar>(s: &Signal<T>, band: FreqBand) -> Signal<T> {
    let n = s.len();
    let mut spec = fft_forward(s.values());
    for (k, c) in spec.iter_mut().enumerate() {
        let kk = k.min(n - k);
        let f = kk as f64 * s.fps() / n as f64;
        if !band.contains(f) {
            *c = Complex::new(T::zero(), T::zero());
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let scale = T::of_usize(n);
    let values = spec.iter().map(|c| c.re / scale).collect();
    Signal::new(values, s.fps()).expect("band-passed signal stays finite")
}

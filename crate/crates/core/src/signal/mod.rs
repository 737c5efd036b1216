//! One-dimensional signal mathematics: conditioning, spectra, heart-rate
//! metrics, peak detection and HRV.

mod hrv;
mod peaks;
mod spectrum;

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::{cast_slice, Scalar};

pub use hrv::{hrv_metrics, HrvMetrics, HF_BAND, LF_BAND};
pub use peaks::{detect_peaks, PeakDetector};
pub use spectrum::{
    bandpass, compute_psd, hr_from_psd, ipr, periodogram, psd_with_tape, snr_db, FreqBand, Psd, PsdOptions, PsdTape,
    SNR_CAP_DB, SNR_HALF_WINDOW_HZ,
};

/// Uniformly sampled real signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal<T> {
    values: Vec<T>,
    fps: f64,
}

impl<T: Scalar> Signal<T> {
    pub fn new(values: Vec<T>, fps: f64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidInput(format!(
                "fps must be finite and positive, got {fps}"
            )));
        }
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "signal needs at least 2 samples, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value at index {i}")));
        }
        Ok(Self { values, fps })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.fps
    }

    /// Sub-signal `[start, start + len)` in samples.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.values.len() {
            return Err(Error::InvalidInput(format!(
                "window {start}..{} exceeds signal length {}",
                start + len,
                self.values.len()
            )));
        }
        Self::new(self.values[start..start + len].to_vec(), self.fps)
    }

    pub fn cast<U: Scalar>(&self) -> Signal<U> {
        Signal {
            values: cast_slice(&self.values),
            fps: self.fps,
        }
    }

    /// Writes the two-column `time_s,value` CSV form. `t0` is the time of the
    /// first sample.
    pub fn write_csv<W: Write>(&self, w: W, t0: f64) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time_s", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            let t = t0 + i as f64 / self.fps;
            wr.write_record([t.to_string(), v.f64().to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the CSV form; returns the signal and the time of its first
    /// sample. The frame rate is recovered from the time column.
    pub fn read_csv<R: Read>(r: R) -> Result<(Self, f64)> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "time_s" || &headers[1] != "value" {
            return Err(Error::InvalidInput(format!(
                "expected header `time_s,value`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("unparsable CSV row {:?}", rec)))
            };
            times.push(parse(0)?);
            values.push(T::of(parse(1)?));
        }
        if times.len() < 2 {
            return Err(Error::InvalidInput("CSV signal needs at least 2 rows".into()));
        }
        let span = times[times.len() - 1] - times[0];
        let fps = (times.len() - 1) as f64 / span;
        Ok((Self::new(values, fps)?, times[0]))
    }
}

/// Removes the least-squares line and scales to unit (population) variance.
///
/// A signal that is constant after detrending maps to all zeros.
pub fn detrend_standardize<T: Scalar>(s: &Signal<T>) -> Signal<T> {
    let (values, _) = condition(s.values(), Trend::Linear);
    Signal { values, fps: s.fps }
}

/// Trend removed before standardization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Trend {
    Mean,
    Linear,
}

/// Detrend + standardize, returning the scale that was divided out (zero when
/// the residual vanished).
pub(crate) fn condition<T: Scalar>(x: &[T], trend: Trend) -> (Vec<T>, T) {
    let mut r = remove_trend(x, trend);
    let n = T::of_usize(x.len());
    let sigma = (r.iter().map(|&v| v * v).sum::<T>() / n).sqrt();
    let mean = x.iter().copied().sum::<T>() / n;
    let spread = (x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n).sqrt();
    if sigma <= T::epsilon().sqrt() * spread || sigma == T::zero() {
        r.iter_mut().for_each(|v| *v = T::zero());
        return (r, T::zero());
    }
    r.iter_mut().for_each(|v| *v = *v / sigma);
    (r, sigma)
}

/// Backward pass of [`condition`]: maps a gradient on the conditioned output
/// to a gradient on the raw input.
pub(crate) fn condition_backward<T: Scalar>(conditioned: &[T], sigma: T, grad: &[T], trend: Trend) -> Vec<T> {
    if sigma == T::zero() {
        return vec![T::zero(); grad.len()];
    }
    let n = T::of_usize(grad.len());
    let proj = grad.iter().zip(conditioned).map(|(&g, &s)| g * s).sum::<T>() / n;
    let g_r: Vec<T> = grad
        .iter()
        .zip(conditioned)
        .map(|(&g, &s)| (g - s * proj) / sigma)
        .collect();
    // the detrend projection is symmetric, so its adjoint is itself
    remove_trend(&g_r, trend)
}

fn remove_trend<T: Scalar>(x: &[T], trend: Trend) -> Vec<T> {
    let n = x.len();
    let nf = T::of_usize(n);
    let t_mean = T::of((n as f64 - 1.0) / 2.0);
    let x_mean = x.iter().copied().sum::<T>() / nf;
    if trend == Trend::Mean {
        return x.iter().map(|&v| v - x_mean).collect();
    }
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (i, &v) in x.iter().enumerate() {
        let dt = T::of_usize(i) - t_mean;
        sxy = sxy + dt * (v - x_mean);
        sxx = sxx + dt * dt;
    }
    let slope = if sxx > T::zero() { sxy / sxx } else { T::zero() };
    x.iter()
        .enumerate()
        .map(|(i, &v)| v - x_mean - slope * (T::of_usize(i) - t_mean))
        .collect()
}

fn centered_unit<T: Scalar>(x: &[T]) -> Result<(Vec<T>, T)> {
    let n = T::of_usize(x.len());
    let mean = x.iter().copied().sum::<T>() / n;
    let c: Vec<T> = x.iter().map(|&v| v - mean).collect();
    let norm = c.iter().map(|&v| v * v).sum::<T>().sqrt();
    let scale = x.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    if norm <= T::epsilon() * (T::one() + scale) * n.sqrt() {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((c.into_iter().map(|v| v / norm).collect(), norm))
}

/// Sample Pearson correlation coefficient.
pub fn pearson_r<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    Ok(pearson_with_grad(a, b)?.0)
}

/// Pearson correlation together with its gradients with respect to both
/// inputs.
pub fn pearson_with_grad<T: Scalar>(a: &[T], b: &[T]) -> Result<(T, Vec<T>, Vec<T>)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "pearson inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("pearson needs at least 2 samples".into()));
    }
    let (za, na) = centered_unit(a)?;
    let (zb, nb) = centered_unit(b)?;
    let r = za.iter().zip(&zb).map(|(&x, &y)| x * y).sum::<T>();
    let r = r.max(-T::one()).min(T::one());
    // d r / d a = (z_b - r z_a) / |a_c|; centering is absorbed because z_b and z_a are zero-mean
    let ga = za.iter().zip(&zb).map(|(&x, &y)| (y - r * x) / na).collect();
    let gb = zb.iter().zip(&za).map(|(&y, &x)| (x - r * y) / nb).collect();
    Ok((r, ga, gb))
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StRppgBlock;
use crate::scalar::Scalar;
use crate::signal::Signal;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Samples per spatial cell.
    pub k: usize,
    /// Window length in seconds.
    pub delta_t_s: f64,
    /// One window per cell spanning the whole block (temporal similarity
    /// disabled); `k` and `delta_t_s` are ignored.
    pub full_length: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: 4,
            delta_t_s: 5.0,
            full_length: false,
        }
    }
}

impl SamplerConfig {
    /// Window length in samples for a signal at `fps` of `total` samples.
    pub fn window_len(&self, fps: f64, total: usize) -> Result<usize> {
        if self.full_length {
            return Ok(total);
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        let duration = total as f64 / fps;
        if !(self.delta_t_s > 0.0) || self.delta_t_s >= duration {
            return Err(Error::InvalidConfig(format!(
                "window {} s must satisfy 0 < dt < T = {duration} s",
                self.delta_t_s
            )));
        }
        Ok(((self.delta_t_s * fps).round() as usize).clamp(2, total))
    }

    pub fn samples_per_cell(&self) -> usize {
        if self.full_length {
            1
        } else {
            self.k
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleKind {
    Rppg,
    Gt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOrigin {
    pub video: usize,
    pub kind: SampleKind,
    /// First sample index and the matching time in seconds.
    pub start: usize,
    pub t_s: f64,
    /// Spatial cell for rPPG samples.
    pub cell: Option<(usize, usize)>,
}

/// Windowed trace with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSample<T> {
    pub trace: Signal<T>,
    pub origin: SampleOrigin,
}

/// Draws `K` windows with independent uniform start times from every cell of
/// the block, cell by cell in row-major order.
pub fn sample_st<T: Scalar, R: Rng + ?Sized>(
    block: &StRppgBlock<T>,
    video: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<SignalSample<T>>> {
    let total = block.len();
    let len = cfg.window_len(block.fps(), total)?;
    let s = block.s();
    let mut out = Vec::with_capacity(s * s * cfg.samples_per_cell());
    for h in 0..s {
        for w in 0..s {
            let trace = block.trace(h, w);
            for _ in 0..cfg.samples_per_cell() {
                let start = rng.random_range(0..=total - len);
                out.push(SignalSample {
                    trace: Signal::new(trace[start..start + len].to_vec(), block.fps())?,
                    origin: SampleOrigin {
                        video,
                        kind: SampleKind::Rppg,
                        start,
                        t_s: start as f64 / block.fps(),
                        cell: Some((h, w)),
                    },
                });
            }
        }
    }
    Ok(out)
}

/// Draws `n` windows of `len` samples with uniform random starts from a GT signal.
pub fn sample_gt<T: Scalar, R: Rng + ?Sized>(
    gt: &Signal<T>,
    video: usize,
    n: usize,
    len: usize,
    rng: &mut R,
) -> Result<Vec<SignalSample<T>>> {
    if len < 2 || len > gt.len() {
        return Err(Error::InvalidConfig(format!(
            "GT window of {len} samples does not fit a signal of {} samples",
            gt.len()
        )));
    }
    (0..n)
        .map(|_| {
            let start = rng.random_range(0..=gt.len() - len);
            Ok(SignalSample {
                trace: gt.window(start, len)?,
                origin: SampleOrigin {
                    video,
                    kind: SampleKind::Gt,
                    start,
                    t_s: start as f64 / gt.fps(),
                    cell: None,
                },
            })
        })
        .collect()
}

/// [`sample_gt`] with the window given in seconds.
pub fn sample_gt_seconds<T: Scalar, R: Rng + ?Sized>(
    gt: &Signal<T>,
    video: usize,
    n: usize,
    delta_t_s: f64,
    rng: &mut R,
) -> Result<Vec<SignalSample<T>>> {
    let len = (delta_t_s * gt.fps()).round() as usize;
    if !(delta_t_s > 0.0) || len > gt.len() {
        return Err(Error::InvalidConfig(format!(
            "GT of {} s is shorter than the {delta_t_s} s window",
            gt.duration_s()
        )));
    }
    sample_gt(gt, video, n, len, rng)
}

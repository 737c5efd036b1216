//! Spatiotemporal and GT samplers and the contrastive PSD losses.

mod loss;
mod sampler;

pub use loss::{
    loss_gr_neg, loss_gr_pos, loss_rr_neg, loss_rr_pos, loss_total, loss_total_with_grad, LossBreakdown, LossGrads,
    LossInputs, LossToggles,
};
pub use sampler::{sample_gt, sample_gt_seconds, sample_st, SampleKind, SampleOrigin, SamplerConfig, SignalSample};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::signal::{psd_with_tape, PsdOptions, PsdTape};

/// PSDs of a set of samples, with their tapes for back-propagation.
pub fn sample_psds<T: Scalar>(
    samples: &[SignalSample<T>],
    opts: &PsdOptions,
) -> Result<(Vec<Vec<T>>, Vec<PsdTape<T>>)> {
    let mut psds = Vec::with_capacity(samples.len());
    let mut tapes = Vec::with_capacity(samples.len());
    for s in samples {
        let (p, t) = psd_with_tape(s.trace.values(), s.trace.fps(), opts)?;
        psds.push(p.power);
        tapes.push(t);
    }
    Ok((psds, tapes))
}

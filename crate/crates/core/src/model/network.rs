use ndarray::{Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    adaptive_pool, adaptive_pool_backward, elu, elu_backward, normalize_input, normalize_input_backward, Conv3d,
    ConvCache, TConvCache, TConvTime,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{pearson_with_grad, Signal};
use crate::synth::VideoClip;

/// Admissible spatial sizes of the output block.
pub const SPATIAL_SIZES: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Output grid side `S`.
    pub s: usize,
    /// Side of the square face crop fed to the network.
    pub input_size: usize,
    /// Spatial stride (and kernel) of the stem convolution.
    pub stem_stride: usize,
    /// Widths of the stem, the spatial stages and the temporal stages.
    pub channels: [usize; 3],
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            s: 2,
            input_size: 64,
            stem_stride: 4,
            channels: [8, 16, 16],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !SPATIAL_SIZES.contains(&self.s) {
            return Err(Error::InvalidConfig(format!(
                "S = {} not in {:?}",
                self.s, SPATIAL_SIZES
            )));
        }
        if self.stem_stride == 0 || self.input_size / self.stem_stride < 4 {
            return Err(Error::InvalidConfig(format!(
                "input size {} with stem stride {} leaves fewer than 4 pixels",
                self.input_size, self.stem_stride
            )));
        }
        if self.channels.iter().any(|&c| c == 0 || c > 64) {
            return Err(Error::InvalidConfig("channel widths must lie in 1..=64".into()));
        }
        Ok(())
    }
}

/// `T x S x S` array of rPPG traces.
#[derive(Clone, Debug, PartialEq)]
pub struct StRppgBlock<T> {
    values: Array3<T>,
    fps: f64,
}

impl<T: Scalar> StRppgBlock<T> {
    pub fn new(values: Array3<T>, fps: f64) -> Result<Self> {
        let (t, s, s2) = values.dim();
        if t < 2 || s == 0 || s != s2 {
            return Err(Error::Shape(format!("block must be T x S x S, got {t} x {s} x {s2}")));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::InvalidInput(format!("fps {fps} must be positive")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("block contains non-finite values".into()));
        }
        Ok(Self { values, fps })
    }

    pub fn values(&self) -> &Array3<T> {
        &self.values
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.values.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn s(&self) -> usize {
        self.values.dim().1
    }

    /// Trace of cell `(h, w)`.
    pub fn trace(&self, h: usize, w: usize) -> Vec<T> {
        self.values.slice(ndarray::s![.., h, w]).to_vec()
    }
}

/// Mean over the spatial cells at each time step.
pub fn inference_rppg<T: Scalar>(block: &StRppgBlock<T>) -> Signal<T> {
    let (t, s, _) = block.values.dim();
    let flat = block
        .values
        .view()
        .into_shape_with_order((t, s * s))
        .expect("contiguous block");
    let mean = flat.mean_axis(Axis(1)).expect("non-empty grid");
    Signal::new(mean.to_vec(), block.fps).expect("block invariants give a valid signal")
}

/// Gradient of a loss on `inference_rppg(block)` spread back to the block.
pub fn inference_rppg_backward<T: Scalar>(grad: &[T], s: usize) -> Array3<T> {
    let inv = T::one() / T::of_usize(s * s);
    Array3::from_shape_fn((grad.len(), s, s), |(t, _, _)| grad[t] * inv)
}

/// 3-D convolutional encoder-decoder producing an ST-rPPG block.
#[derive(Clone, Debug, PartialEq)]
pub struct StModel<T> {
    cfg: ModelConfig,
    stem: Conv3d<T>,
    down1: Conv3d<T>,
    down2: Conv3d<T>,
    tdown1: Conv3d<T>,
    tdown2: Conv3d<T>,
    up1: TConvTime<T>,
    up2: TConvTime<T>,
    head: Conv3d<T>,
}

/// Intermediate values kept for the backward pass.
pub struct Tape<T> {
    xn: Array4<T>,
    sigma: T,
    acts: Vec<Array4<T>>,
    convs: Vec<ConvCache<T>>,
    tconvs: Vec<TConvCache<T>>,
    head_hw: (usize, usize),
}

impl<T: Scalar> StModel<T> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let [c0, c1, c2] = cfg.channels;
        let st = cfg.stem_stride;
        Ok(Self {
            stem: Conv3d::new(3, c0, [1, st, st], [1, st, st], [0, 0, 0], 2.0, &mut rng),
            down1: Conv3d::new(c0, c1, [3, 3, 3], [1, 2, 2], [1, 1, 1], 2.0, &mut rng),
            down2: Conv3d::new(c1, c1, [3, 3, 3], [1, 2, 2], [1, 1, 1], 2.0, &mut rng),
            tdown1: Conv3d::new(c1, c2, [3, 3, 3], [2, 1, 1], [1, 1, 1], 2.0, &mut rng),
            tdown2: Conv3d::new(c2, c2, [3, 3, 3], [2, 1, 1], [1, 1, 1], 2.0, &mut rng),
            up1: TConvTime::new(c2, c2, 4, 2, 1, &mut rng),
            up2: TConvTime::new(c2, c1, 4, 2, 1, &mut rng),
            head: Conv3d::new(c1, 1, [1, 1, 1], [1, 1, 1], [0, 0, 0], 1.0, &mut rng),
            cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn convs(&self) -> [&Conv3d<T>; 6] {
        [
            &self.stem,
            &self.down1,
            &self.down2,
            &self.tdown1,
            &self.tdown2,
            &self.head,
        ]
    }

    /// Parameter tensors in a fixed order: conv weights/biases (stem,
    /// spatial, temporal, head), then the two transposed convolutions.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(16);
        for c in self.convs() {
            out.push(c.w.as_slice().expect("contiguous"));
            out.push(c.b.as_slice().expect("contiguous"));
        }
        for t in [&self.up1, &self.up2] {
            out.push(t.w.as_slice().expect("contiguous"));
            out.push(t.b.as_slice().expect("contiguous"));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(16);
        for c in [
            &mut self.stem,
            &mut self.down1,
            &mut self.down2,
            &mut self.tdown1,
            &mut self.tdown2,
            &mut self.head,
        ] {
            out.push(c.w.as_slice_mut().expect("contiguous"));
            out.push(c.b.as_slice_mut().expect("contiguous"));
        }
        for t in [&mut self.up1, &mut self.up2] {
            out.push(t.w.as_slice_mut().expect("contiguous"));
            out.push(t.b.as_slice_mut().expect("contiguous"));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Overwrites all parameters; shapes must match `params()`.
    pub fn set_params(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let mut dst = self.params_mut();
        if dst.len() != values.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                dst.len(),
                values.len()
            )));
        }
        for (i, (d, v)) in dst.iter_mut().zip(values).enumerate() {
            if d.len() != v.len() {
                return Err(Error::Shape(format!(
                    "tensor {i}: expected {} values, got {}",
                    d.len(),
                    v.len()
                )));
            }
            for (a, &b) in d.iter_mut().zip(v) {
                *a = T::of(b);
            }
        }
        Ok(())
    }

    fn check_input(&self, clip: &Array4<T>, fps: f64) -> Result<()> {
        let (c, t, h, w) = clip.dim();
        let n = self.cfg.input_size;
        if c != 3 || h != n || w != n {
            return Err(Error::Shape(format!(
                "expected 3 x T x {n} x {n} input, got {c} x {t} x {h} x {w}"
            )));
        }
        if (t as f64) < 2.0 * fps {
            return Err(Error::Shape(format!(
                "clip has {t} frames, need at least 2 s at {fps} fps"
            )));
        }
        Ok(())
    }

    fn run(&self, clip: &Array4<T>, keep: bool) -> (Array3<T>, Option<Tape<T>>) {
        let (xn, sigma) = normalize_input(clip);
        let mut convs = Vec::new();
        let mut tconvs = Vec::new();
        let mut acts = Vec::new();
        let conv = |layer: &Conv3d<T>, x: &Array4<T>, convs: &mut Vec<ConvCache<T>>| {
            let (y, cache) = layer.forward(x);
            if keep {
                convs.push(cache);
            }
            y
        };
        let a1 = elu(conv(&self.stem, &xn, &mut convs));
        let a2 = elu(conv(&self.down1, &a1, &mut convs));
        let a3 = elu(conv(&self.down2, &a2, &mut convs));
        let a4 = elu(conv(&self.tdown1, &a3, &mut convs));
        let a5 = elu(conv(&self.tdown2, &a4, &mut convs));
        let (u1, c1) = self.up1.forward(&a5, a4.dim().1);
        let a6 = elu(u1);
        let (u2, c2) = self.up2.forward(&a6, a3.dim().1);
        let a7 = elu(u2);
        let h = conv(&self.head, &a7, &mut convs);
        let head_hw = (h.dim().2, h.dim().3);
        let block = adaptive_pool(&h, self.cfg.s);
        if !keep {
            return (block, None);
        }
        tconvs.push(c1);
        tconvs.push(c2);
        acts.extend([a1, a2, a3, a4, a5, a6, a7]);
        (
            block,
            Some(Tape {
                xn,
                sigma,
                acts,
                convs,
                tconvs,
                head_hw,
            }),
        )
    }

    /// Forward pass on a `(3, T, H, W)` clip scaled to `[0, 1]`.
    pub fn forward(&self, clip: &Array4<T>, fps: f64) -> Result<StRppgBlock<T>> {
        self.check_input(clip, fps)?;
        StRppgBlock::new(self.run(clip, false).0, fps)
    }

    /// Forward pass that also records what `backward` needs.
    pub fn forward_tape(&self, clip: &Array4<T>, fps: f64) -> Result<(StRppgBlock<T>, Tape<T>)> {
        self.check_input(clip, fps)?;
        let (block, tape) = self.run(clip, true);
        Ok((StRppgBlock::new(block, fps)?, tape.expect("tape requested")))
    }

    /// Back-propagates `grad` (same shape as the block) to parameter
    /// gradients, ordered as `params()`, and optionally the input gradient.
    pub fn backward(&self, tape: &Tape<T>, grad: &Array3<T>, need_input: bool) -> (Vec<Vec<T>>, Option<Array4<T>>) {
        let (hh, hw) = tape.head_hw;
        let a = &tape.acts;
        let flat = |w: Array2<T>| w.into_raw_vec_and_offset().0;
        let dh = adaptive_pool_backward(grad, hh, hw);
        let (dw_head, db_head, d7) = self.head.backward(&dh, &tape.convs[5], true);
        let d7 = elu_backward(&a[6], d7.expect("requested"));
        let (dw_up2, db_up2, d6) = self.up2.backward(&d7, &tape.tconvs[1]);
        let d6 = elu_backward(&a[5], d6);
        let (dw_up1, db_up1, d5) = self.up1.backward(&d6, &tape.tconvs[0]);
        let d5 = elu_backward(&a[4], d5);
        let (dw_t2, db_t2, d4) = self.tdown2.backward(&d5, &tape.convs[4], true);
        let d4 = elu_backward(&a[3], d4.expect("requested"));
        let (dw_t1, db_t1, d3) = self.tdown1.backward(&d4, &tape.convs[3], true);
        let d3 = elu_backward(&a[2], d3.expect("requested"));
        let (dw_d2, db_d2, d2) = self.down2.backward(&d3, &tape.convs[2], true);
        let d2 = elu_backward(&a[1], d2.expect("requested"));
        let (dw_d1, db_d1, d1) = self.down1.backward(&d2, &tape.convs[1], true);
        let d1 = elu_backward(&a[0], d1.expect("requested"));
        let (dw_stem, db_stem, d0) = self.stem.backward(&d1, &tape.convs[0], need_input);
        let dx = d0.map(|d0| normalize_input_backward(&tape.xn, tape.sigma, &d0));
        let grads = vec![
            flat(dw_stem),
            db_stem.to_vec(),
            flat(dw_d1),
            db_d1.to_vec(),
            flat(dw_d2),
            db_d2.to_vec(),
            flat(dw_t1),
            db_t1.to_vec(),
            flat(dw_t2),
            db_t2.to_vec(),
            flat(dw_head),
            db_head.to_vec(),
            flat(dw_up1),
            db_up1.to_vec(),
            flat(dw_up2),
            db_up2.to_vec(),
        ];
        (grads, dx)
    }

    /// Runs a whole (already cropped) video through the network.
    pub fn forward_video(&self, video: &VideoClip) -> Result<StRppgBlock<T>> {
        self.forward(&video.to_tensor::<T>(0, video.len()), video.fps())
    }
}

/// Per-pixel saliency: absolute gradient of `pearson_r(inference_rppg(forward(video)), reference)`
/// with respect to the input, summed over time and channels, divided by `3T`.
/// Parameters are left untouched.
pub fn saliency_map<T: Scalar>(model: &StModel<T>, video: &VideoClip, reference: &Signal<T>) -> Result<Array2<T>> {
    let clip = video.to_tensor::<T>(0, video.len());
    let (_, g) = pearson_input_grad(model, &clip, video.fps(), reference)?;
    let (c, t, h, w) = g.dim();
    let norm = T::one() / T::of_usize(c * t);
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = T::zero();
        for ci in 0..c {
            for ti in 0..t {
                acc = acc + g[[ci, ti, y, x]].abs();
            }
        }
        acc * norm
    }))
}

/// Pearson correlation of the prediction with `reference` and its gradient
/// with respect to the input clip.
pub fn pearson_input_grad<T: Scalar>(
    model: &StModel<T>,
    clip: &Array4<T>,
    fps: f64,
    reference: &Signal<T>,
) -> Result<(T, Array4<T>)> {
    let (block, tape) = model.forward_tape(clip, fps)?;
    let pred = inference_rppg(&block);
    if pred.len() != reference.len() {
        return Err(Error::Shape(format!(
            "reference has {} samples, prediction {}",
            reference.len(),
            pred.len()
        )));
    }
    let (r, gp, _) = pearson_with_grad(pred.values(), reference.values())?;
    let gb = inference_rppg_backward(&gp, block.s());
    let (_, dx) = model.backward(&tape, &gb, true);
    Ok((r, dx.expect("input gradient requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_cfg(s: usize) -> ModelConfig {
        ModelConfig {
            s,
            input_size: 32,
            channels: [4, 6, 6],
            seed: 3,
            ..ModelConfig::default()
        }
    }

    fn random_clip(t: usize, n: usize, seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn((3, t, n, n), || rng.random_range(0.0..1.0))
    }

    #[test]
    fn output_length_matches_input_for_every_s() {
        for s in SPATIAL_SIZES {
            let m = StModel::<f32>::new(small_cfg(s)).unwrap();
            for t in [60, 61, 75] {
                let b = m.forward(&random_clip(t, 32, 1).mapv(|v| v as f32), 30.0).unwrap();
                assert_eq!(b.values().dim(), (t, s, s));
            }
        }
    }

    #[test]
    fn zero_input_is_finite() {
        let m = StModel::<f32>::new(ModelConfig::default()).unwrap();
        let b = m.forward(&Array4::zeros((3, 300, 64, 64)), 30.0).unwrap();
        assert_eq!(b.values().dim(), (300, 2, 2));
        assert!(b.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let m = StModel::<f32>::new(small_cfg(2)).unwrap();
        assert!(matches!(
            m.forward(&Array4::zeros((3, 60, 16, 32)), 30.0),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            m.forward(&Array4::zeros((1, 60, 32, 32)), 30.0),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            m.forward(&Array4::zeros((3, 59, 32, 32)), 30.0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn inference_mean_of_cells() {
        let t = 50;
        let tone = |f: f64, p: f64| (0..t).map(move |i| (f * i as f64 / 30.0 + p).sin());
        let traces: Vec<Vec<f64>> = vec![
            tone(1.0, 0.0).collect(),
            tone(1.5, 0.3).collect(),
            tone(2.0, 0.7).collect(),
            tone(3.0, 1.1).collect(),
        ];
        let block = StRppgBlock::new(Array3::from_shape_fn((t, 2, 2), |(i, h, w)| traces[h * 2 + w][i]), 30.0).unwrap();
        let out = inference_rppg(&block);
        for i in 0..t {
            let hand = (traces[0][i] + traces[1][i] + traces[2][i] + traces[3][i]) / 4.0;
            assert!((out.values()[i] - hand).abs() < 1e-9);
        }
        let single = StRppgBlock::new(Array3::from_shape_fn((t, 1, 1), |(i, _, _)| traces[2][i]), 30.0).unwrap();
        assert_eq!(inference_rppg(&single).values(), traces[2].as_slice());
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let m = StModel::<f64>::new(small_cfg(2)).unwrap();
        let clip = random_clip(64, 32, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = Array3::from_shape_simple_fn((64, 2, 2), || rng.random_range(-1.0..1.0));
        let (_, tape) = m.forward_tape(&clip, 30.0).unwrap();
        let (grads, _) = m.backward(&tape, &r, false);
        assert!(grads.iter().flatten().all(|g| g.is_finite()));
        let f = |m: &StModel<f64>| (m.forward(&clip, 30.0).unwrap().values() * &r).sum();
        let eps = 1e-6;
        for &(pi, k) in [(0usize, 5usize), (3, 2), (6, 40), (9, 1), (10, 3), (12, 17), (15, 0)].iter() {
            let base: Vec<Vec<f64>> = m.params().iter().map(|p| p.to_vec()).collect();
            let mut plus = base.clone();
            plus[pi][k] += eps;
            let mut minus = base.clone();
            minus[pi][k] -= eps;
            let mut mp = m.clone();
            mp.set_params(&plus).unwrap();
            let mut mm = m.clone();
            mm.set_params(&minus).unwrap();
            let fd = (f(&mp) - f(&mm)) / (2.0 * eps);
            let an = grads[pi][k];
            assert!(
                (fd - an).abs() <= 1e-5 * (1.0 + an.abs()),
                "param {pi}[{k}]: {fd} vs {an}"
            );
        }
    }

    #[test]
    fn saliency_gradient_matches_finite_differences() {
        let m = StModel::<f64>::new(small_cfg(2)).unwrap();
        let clip = random_clip(64, 32, 6);
        let reference = Signal::new((0..64).map(|i| (i as f64 * 0.25).sin()).collect(), 30.0).unwrap();
        let (_, g) = pearson_input_grad(&m, &clip, 30.0, &reference).unwrap();
        let r = |c: &Array4<f64>| {
            let p = inference_rppg(&m.forward(c, 30.0).unwrap());
            crate::signal::pearson_r(p.values(), reference.values()).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eps = 1e-5;
        for _ in 0..8 {
            let idx = (
                rng.random_range(0..3),
                rng.random_range(0..64),
                rng.random_range(0..32),
                rng.random_range(0..32),
            );
            let mut cp = clip.clone();
            cp[idx] += eps;
            let mut cm = clip.clone();
            cm[idx] -= eps;
            let fd = (r(&cp) - r(&cm)) / (2.0 * eps);
            let an = g[idx];
            assert!(
                (fd - an).abs() <= 1e-2 * fd.abs().max(an.abs()).max(1e-6),
                "{idx:?}: {fd} vs {an}"
            );
        }
    }

    #[test]
    fn saliency_on_uniform_video_is_uniform() {
        let m = StModel::<f64>::new(small_cfg(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let levels: Vec<u8> = (0..64).map(|_| rng.random_range(90..110)).collect();
        let frames = Array4::from_shape_fn((64, 32, 32, 3), |(t, _, _, _)| levels[t]);
        let video = VideoClip::new(frames, 30.0).unwrap();
        let reference = Signal::new((0..64).map(|i| (i as f64 * 0.3).sin()).collect(), 30.0).unwrap();
        let map = saliency_map(&m, &video, &reference).unwrap();
        assert!(map.iter().all(|v| *v >= 0.0));
        // Average over stem blocks; what remains is position-dependent
        // weight structure and zero-padding at the borders.
        let blocks: Vec<f64> = map
            .exact_chunks((4, 4))
            .into_iter()
            .map(|b| b.mean().unwrap())
            .collect();
        let mean = blocks.iter().sum::<f64>() / blocks.len() as f64;
        let sd = (blocks.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / blocks.len() as f64).sqrt();
        eprintln!("uniform saliency cv {}", sd / mean);
        assert!(mean > 0.0 && sd / mean < 0.5, "coefficient of variation {}", sd / mean);
    }

    #[test]
    fn constant_reference_is_rejected() {
        let m = StModel::<f64>::new(small_cfg(1)).unwrap();
        let video = VideoClip::new(Array4::from_elem((64, 32, 32, 3), 7u8), 30.0).unwrap();
        let reference = Signal::new(vec![1.0; 64], 30.0).unwrap();
        assert!(matches!(
            saliency_map(&m, &video, &reference),
            Err(Error::UndefinedCorrelation)
        ));
    }

    #[test]
    fn same_seed_same_output() {
        let clip = random_clip(60, 32, 9).mapv(|v| v as f32);
        let a = StModel::<f32>::new(small_cfg(4)).unwrap().forward(&clip, 30.0).unwrap();
        let b = StModel::<f32>::new(small_cfg(4)).unwrap().forward(&clip, 30.0).unwrap();
        assert_eq!(a, b);
    }
}

use std::f64::consts::PI;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ppg::{generate_ppg, HrComponent, HrProfile};
use super::video::{crop_boxes, crop_face, crop_map, LandmarkSequence, VideoClip};
use crate::error::{Error, Result};
use crate::signal::Signal;

/// Elliptical skin region in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkinEllipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl SkinEllipse {
    /// Whether the pixel with integer coordinates `(x, y)` has its center
    /// inside the ellipse.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    /// Row-major `height x width` mask.
    pub fn mask(&self, width: usize, height: usize) -> Vec<bool> {
        (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| self.contains(x, y))
            .collect()
    }

    /// Synthetic landmarks: points on the ellipse outline.
    pub fn landmarks(&self, n_points: usize) -> Vec<(f64, f64)> {
        (0..n_points)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n_points as f64;
                (self.cx + self.rx * a.cos(), self.cy + self.ry * a.sin())
            })
            .collect()
    }
}

/// Flickering distractor block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGeom {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub freq_hz: f64,
    pub amplitude: f64,
}

impl PatchGeom {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.size && y >= self.y && y < self.y + self.size
    }

    pub fn mask(&self, width: usize, height: usize) -> Vec<bool> {
        (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| self.contains(x, y))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    pub enabled: bool,
    /// Top-left corner and side as fractions of the frame width/height.
    pub x_frac: f64,
    pub y_frac: f64,
    pub size_frac: f64,
    pub amplitude: f64,
    pub hr_min_bpm: f64,
    pub hr_max_bpm: f64,
    /// Minimum separation of the flicker from the mean pulse rate (Hz).
    pub min_separation_hz: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            x_frac: 0.14,
            y_frac: 0.16,
            size_frac: 0.14,
            amplitude: 0.08,
            hr_min_bpm: 40.0,
            hr_max_bpm: 250.0,
            min_separation_hz: 0.25,
        }
    }
}

/// Synthetic corpus parameters. Identical configs give bit-identical corpora.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub duration_s: f64,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub hr_min_bpm: f64,
    pub hr_max_bpm: f64,
    /// Amplitude of the slow heart-rate wander (bpm).
    pub hr_wander_bpm: f64,
    pub hr_wander_period_s: f64,
    /// Respiratory sinus arrhythmia amplitude (bpm) and rate (Hz).
    pub rsa_bpm: f64,
    pub rsa_hz: f64,
    pub harmonics: Vec<f64>,
    /// Skin color modulation per unit of the standardized pulse.
    pub pulse_amplitude: f64,
    /// Relative per-channel pulse strength.
    pub pulse_rgb: [f64; 3],
    pub skin_rgb: [f64; 3],
    pub skin_tone_jitter: f64,
    pub background_rgb: [f64; 3],
    pub texture_std: f64,
    pub pixel_noise_std: f64,
    /// Standard deviation of the multiplicative illumination drift.
    pub drift_amplitude: f64,
    pub drift_smoothing_s: f64,
    /// Skin ellipse as fractions of the frame size.
    pub skin_cx_frac: f64,
    pub skin_cy_frac: f64,
    pub skin_rx_frac: f64,
    pub skin_ry_frac: f64,
    pub patch: PatchConfig,
    /// Extra ground truth generated before and after the video (s).
    pub gt_margin_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_videos: 8,
            duration_s: 30.0,
            fps: 30.0,
            width: 64,
            height: 64,
            hr_min_bpm: 50.0,
            hr_max_bpm: 110.0,
            hr_wander_bpm: 1.5,
            hr_wander_period_s: 60.0,
            rsa_bpm: 1.5,
            rsa_hz: 0.25,
            harmonics: vec![1.0, 0.35],
            pulse_amplitude: 0.012,
            pulse_rgb: [0.45, 1.0, 0.7],
            skin_rgb: [0.78, 0.58, 0.48],
            skin_tone_jitter: 0.05,
            background_rgb: [0.32, 0.36, 0.42],
            texture_std: 0.02,
            pixel_noise_std: 0.005,
            drift_amplitude: 0.02,
            drift_smoothing_s: 1.0,
            skin_cx_frac: 0.5,
            skin_cy_frac: 0.53,
            skin_rx_frac: 0.24,
            skin_ry_frac: 0.32,
            patch: PatchConfig::default(),
            gt_margin_s: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_videos == 0 {
            return bad("n_videos must be positive".into());
        }
        if !(self.fps > 0.0) || self.duration_s < 2.0 {
            return bad("need fps > 0 and duration_s >= 2".into());
        }
        if self.width < 16 || self.height < 16 {
            return bad("frames must be at least 16x16".into());
        }
        if !(40.0 <= self.hr_min_bpm && self.hr_min_bpm <= self.hr_max_bpm && self.hr_max_bpm <= 250.0) {
            return bad(format!(
                "heart rate range [{}, {}] must lie inside [40, 250]",
                self.hr_min_bpm, self.hr_max_bpm
            ));
        }
        if self.hr_min_bpm - self.hr_wander_bpm - self.rsa_bpm < 40.0
            || self.hr_max_bpm + self.hr_wander_bpm + self.rsa_bpm > 250.0
        {
            return bad("heart rate modulation leaves [40, 250]".into());
        }
        if self.pixel_noise_std < 0.0 || self.drift_amplitude < 0.0 || self.gt_margin_s < 0.0 {
            return bad("noise, drift and margin must be non-negative".into());
        }
        if self.patch.enabled {
            let p = self.patch_geom(0.0);
            let skin = self.skin();
            if p.x + p.size > self.width || p.y + p.size > self.height || p.size == 0 {
                return bad("noise patch does not fit in the frame".into());
            }
            for y in p.y..p.y + p.size {
                for x in p.x..p.x + p.size {
                    if skin.contains(x, y) {
                        return bad(format!("noise patch overlaps the skin region at ({x}, {y})"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn skin(&self) -> SkinEllipse {
        SkinEllipse {
            cx: self.skin_cx_frac * self.width as f64,
            cy: self.skin_cy_frac * self.height as f64,
            rx: self.skin_rx_frac * self.width as f64,
            ry: self.skin_ry_frac * self.height as f64,
        }
    }

    fn patch_geom(&self, freq_hz: f64) -> PatchGeom {
        PatchGeom {
            x: (self.patch.x_frac * self.width as f64).round() as usize,
            y: (self.patch.y_frac * self.height as f64).round() as usize,
            size: (self.patch.size_frac * self.width.min(self.height) as f64).round() as usize,
            freq_hz,
            amplitude: self.patch.amplitude,
        }
    }

    fn n_frames(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    fn margin_frames(&self) -> usize {
        (self.gt_margin_s * self.fps).round() as usize
    }
}

/// Ground truth known only for synthetic records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthMeta {
    /// Heart rate (bpm) at every video frame.
    pub true_hr_profile: Vec<f64>,
    pub skin_mask: SkinEllipse,
    pub patch: Option<PatchGeom>,
}

impl TruthMeta {
    pub fn mean_hr(&self, start: usize, len: usize) -> f64 {
        let w = &self.true_hr_profile[start..start + len];
        w.iter().sum::<f64>() / len as f64
    }

    pub fn landmarks(&self, n_frames: usize) -> Result<LandmarkSequence> {
        LandmarkSequence::repeated(self.skin_mask.landmarks(24), n_frames)
    }
}

/// A video with its (optional) ground-truth pulse and bookkeeping flags.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRecord {
    pub video: VideoClip,
    pub gt: Option<Signal<f64>>,
    /// Time of the first GT sample relative to the first video frame (s);
    /// negative when the GT carries a leading margin.
    pub gt_start_s: f64,
    pub phi: bool,
    pub desync_offset_s: f64,
    pub truth: Option<TruthMeta>,
}

impl LabeledRecord {
    pub fn check(&self) -> Result<()> {
        if self.phi != self.gt.is_some() {
            return Err(Error::Consistency(format!(
                "phi = {} but gt is {}",
                self.phi as u8,
                if self.gt.is_some() { "present" } else { "absent" }
            )));
        }
        Ok(())
    }

    /// GT samples covering video frames `[start, start + len)`, or `None`
    /// when unlabeled. Fails if the GT does not cover the interval.
    pub fn gt_window(&self, start: usize, len: usize) -> Result<Option<Signal<f64>>> {
        let Some(gt) = &self.gt else { return Ok(None) };
        if (gt.fps() - self.video.fps()).abs() > 1e-6 * gt.fps() {
            return Err(Error::InvalidInput(format!(
                "GT sampled at {} Hz but video at {} Hz",
                gt.fps(),
                self.video.fps()
            )));
        }
        let offset = (-self.gt_start_s * gt.fps()).round();
        if offset < 0.0 {
            return Err(Error::InvalidInput("GT starts after the video".into()));
        }
        gt.window(start + offset as usize, len).map(Some)
    }

    /// Face crop of the whole video at `size x size`, using truth-derived
    /// landmarks when available and a centered square otherwise.
    pub fn cropped(&self, size: usize) -> Result<VideoClip> {
        let lm = self.landmarks()?;
        crop_face(&self.video, &lm, size)
    }

    pub fn landmarks(&self) -> Result<LandmarkSequence> {
        match &self.truth {
            Some(t) => t.landmarks(self.video.len()),
            None => {
                let (w, h) = (self.video.width() as f64, self.video.height() as f64);
                let side = w.min(h) / super::video::CROP_SCALE;
                let pts = vec![(w / 2.0, h / 2.0 - side / 2.0), (w / 2.0, h / 2.0 + side / 2.0)];
                LandmarkSequence::repeated(pts, self.video.len())
            }
        }
    }

    /// Truth masks (skin, patch) mapped into the `size x size` crop.
    pub fn cropped_masks(&self, size: usize) -> Result<Option<(Vec<bool>, Option<Vec<bool>>)>> {
        let Some(truth) = &self.truth else { return Ok(None) };
        let (w, h) = (self.video.width(), self.video.height());
        let b = crop_boxes(&self.landmarks()?, w, h)?[0];
        let to_map = |m: Vec<bool>| -> Vec<bool> {
            let f: Vec<f64> = m.iter().map(|&v| v as u8 as f64).collect();
            crop_map(&f, w, h, &b, size).into_iter().map(|v| v > 0.5).collect()
        };
        let skin = to_map(truth.skin_mask.mask(w, h));
        let patch = truth.patch.map(|p| to_map(p.mask(w, h)));
        Ok(Some((skin, patch)))
    }
}

/// Smoothed random walk with zero mean and the requested standard deviation.
fn illumination_drift<R: Rng>(n: usize, fps: f64, std: f64, smoothing_s: f64, rng: &mut R) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut walk = Vec::with_capacity(n);
    let mut acc = 0.0;
    for _ in 0..n {
        acc += normal.sample(rng);
        walk.push(acc);
    }
    let half = ((smoothing_s * fps) / 2.0).round().max(1.0) as usize;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + walk[i];
    }
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect();
    let mean = smooth.iter().sum::<f64>() / n as f64;
    let sd = (smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if sd == 0.0 {
        return vec![0.0; n];
    }
    smooth.iter().map(|v| (v - mean) / sd * std).collect()
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders the video for a pulse signal. `ppg` must cover the video plus
/// `cfg.gt_margin_s` on each side; the stored GT is the whole `ppg`.
pub fn render_video<R: Rng>(ppg: &Signal<f64>, cfg: &SynthConfig, rng: &mut R) -> Result<LabeledRecord> {
    cfg.validate()?;
    let n = cfg.n_frames();
    let margin = cfg.margin_frames();
    if ppg.len() < n + 2 * margin {
        return Err(Error::InvalidInput(format!(
            "pulse has {} samples, need {} (video plus margins)",
            ppg.len(),
            n + 2 * margin
        )));
    }
    let (w, h) = (cfg.width, cfg.height);
    let skin = cfg.skin();
    let skin_mask = skin.mask(w, h);

    let tone: Vec<f64> = cfg
        .skin_rgb
        .iter()
        .map(|&c| c + rng.random_range(-1.0..=1.0) * cfg.skin_tone_jitter)
        .collect();
    let drift = illumination_drift(n, cfg.fps, cfg.drift_amplitude, cfg.drift_smoothing_s, rng);

    let texture_dist = Normal::new(0.0, cfg.texture_std.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut base = vec![0.0; h * w * 3];
    for y in 0..h {
        let shade = 0.9 + 0.2 * y as f64 / h as f64;
        for x in 0..w {
            for c in 0..3 {
                let b = if skin_mask[y * w + x] {
                    tone[c]
                } else {
                    cfg.background_rgb[c] * shade
                };
                base[(y * w + x) * 3 + c] = b + texture_dist.sample(rng);
            }
        }
    }

    let patch = if cfg.patch.enabled {
        let mut p = cfg.patch_geom(0.0);
        p.freq_hz = draw_patch_frequency(cfg, ppg, rng);
        Some(p)
    } else {
        None
    };
    let patch_phase = rng.random_range(0.0..2.0 * PI);
    let patch_mask = patch.map(|p| p.mask(w, h));

    let noise = Normal::new(0.0, cfg.pixel_noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut frames = Array4::<u8>::zeros((n, h, w, 3));
    let buf = frames.as_slice_mut().expect("fresh array is contiguous");
    let pulse = &ppg.values()[margin..margin + n];
    for t in 0..n {
        let illum = 1.0 + drift[t];
        let flicker =
            patch.map(|p| 0.5 + p.amplitude * (2.0 * PI * p.freq_hz * t as f64 / cfg.fps + patch_phase).sin());
        let frame = &mut buf[t * h * w * 3..(t + 1) * h * w * 3];
        for i in 0..h * w {
            for c in 0..3 {
                let mut v = base[i * 3 + c];
                if skin_mask[i] {
                    v += cfg.pulse_amplitude * cfg.pulse_rgb[c] * pulse[t];
                }
                if let (Some(pm), Some(f)) = (&patch_mask, flicker) {
                    if pm[i] {
                        v = f;
                    }
                }
                frame[i * 3 + c] = quantize(v * illum + noise.sample(rng));
            }
        }
    }
    Ok(LabeledRecord {
        video: VideoClip::new(frames, cfg.fps)?,
        gt: Some(ppg.clone()),
        gt_start_s: -(margin as f64) / cfg.fps,
        phi: true,
        desync_offset_s: 0.0,
        truth: Some(TruthMeta {
            true_hr_profile: Vec::new(),
            skin_mask: skin,
            patch,
        }),
    })
}

fn draw_patch_frequency<R: Rng>(cfg: &SynthConfig, ppg: &Signal<f64>, rng: &mut R) -> f64 {
    let lo = cfg.patch.hr_min_bpm / 60.0;
    let hi = cfg.patch.hr_max_bpm / 60.0;
    let pulse_f = crate::signal::compute_psd(ppg, true)
        .ok()
        .and_then(|p| crate::signal::hr_from_psd(&p).ok())
        .map(|b| b / 60.0);
    loop {
        let f = rng.random_range(lo..=hi);
        match pulse_f {
            Some(pf) if (f - pf).abs() < cfg.patch.min_separation_hz => continue,
            _ => return f,
        }
    }
}

fn stratified_rates(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = cfg.n_videos;
    let span = cfg.hr_max_bpm - cfg.hr_min_bpm;
    let mut rates: Vec<f64> = (0..n)
        .map(|i| cfg.hr_min_bpm + (i as f64 + rng.random_range(0.2..0.8)) / n as f64 * span)
        .collect();
    use rand::seq::SliceRandom;
    rates.shuffle(rng);
    rates
}

/// Generates record `index` of the corpus described by `cfg`.
pub fn generate_record(cfg: &SynthConfig, index: usize, base_bpm: f64) -> Result<LabeledRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let margin = cfg.margin_frames();
    let n = cfg.n_frames();
    let total = n + 2 * margin;
    let profile = HrProfile {
        base_bpm,
        slope_bpm_per_s: 0.0,
        components: vec![
            HrComponent {
                amp_bpm: cfg.hr_wander_bpm,
                freq_hz: 1.0 / cfg.hr_wander_period_s,
                phase: rng.random_range(0.0..2.0 * PI),
            },
            HrComponent {
                amp_bpm: cfg.rsa_bpm,
                freq_hz: cfg.rsa_hz,
                phase: rng.random_range(0.0..2.0 * PI),
            },
        ],
    };
    let ppg = generate_ppg(total as f64 / cfg.fps, cfg.fps, &profile, &cfg.harmonics, &mut rng)?;
    let mut rec = render_video(&ppg, cfg, &mut rng)?;
    if let Some(truth) = rec.truth.as_mut() {
        truth.true_hr_profile = (0..n).map(|i| profile.bpm_at((i + margin) as f64 / cfg.fps)).collect();
    }
    Ok(rec)
}

/// Generates the full corpus; heart rates are stratified over the configured
/// range so that every video has a distinct rate.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<LabeledRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rates = stratified_rates(cfg, &mut rng);
    rates
        .iter()
        .enumerate()
        .map(|(i, &bpm)| generate_record(cfg, i, bpm))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{compute_psd, hr_from_psd};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_videos: 2,
            duration_s: 10.0,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_corpus(&small(5)).unwrap();
        let b = generate_corpus(&small(5)).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&small(6)).unwrap();
        assert_ne!(a[0].video, c[0].video);
    }

    #[test]
    fn zero_amplitude_leaves_noise_floor() {
        let cfg = SynthConfig {
            pulse_amplitude: 0.0,
            drift_amplitude: 0.0,
            n_videos: 1,
            duration_s: 10.0,
            ..SynthConfig::default()
        };
        let rec = generate_corpus(&cfg).unwrap().remove(0);
        let mask = cfg.skin().mask(cfg.width, cfg.height);
        let frames = rec.video.frames();
        let (t, h, w, _) = frames.dim();
        let floor = cfg.pixel_noise_std.powi(2) + (1.0 / 255.0f64).powi(2) / 12.0;
        let mut vars = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !mask[y * w + x] {
                    continue;
                }
                let v: Vec<f64> = (0..t).map(|i| frames[[i, y, x, 1]] as f64 / 255.0).collect();
                let m = v.iter().sum::<f64>() / t as f64;
                vars.push(v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / t as f64);
            }
        }
        let mean_var = vars.iter().sum::<f64>() / vars.len() as f64;
        assert!((mean_var / floor - 1.0).abs() < 0.25, "{mean_var} vs {floor}");
    }

    #[test]
    fn skin_trace_recovers_heart_rate() {
        let cfg = SynthConfig {
            pulse_amplitude: 0.02,
            pixel_noise_std: 0.005,
            n_videos: 3,
            ..SynthConfig::default()
        };
        for rec in generate_corpus(&cfg).unwrap() {
            let mask = cfg.skin().mask(cfg.width, cfg.height);
            let trace = Signal::new(rec.video.masked_mean(&mask, 1), cfg.fps).unwrap();
            let hr = hr_from_psd(&compute_psd(&trace, true).unwrap()).unwrap();
            let gt = rec.gt_window(0, rec.video.len()).unwrap().unwrap();
            let ref_hr = hr_from_psd(&compute_psd(&gt, true).unwrap()).unwrap();
            assert!((hr - ref_hr).abs() < 1e-9, "{hr} vs {ref_hr}");
        }
    }

    #[test]
    fn patch_overlapping_skin_is_rejected() {
        let mut cfg = small(0);
        cfg.patch.enabled = true;
        cfg.patch.x_frac = 0.45;
        cfg.patch.y_frac = 0.45;
        assert!(matches!(generate_corpus(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn patch_flickers_away_from_pulse() {
        let mut cfg = small(1);
        cfg.patch.enabled = true;
        for rec in generate_corpus(&cfg).unwrap() {
            let truth = rec.truth.as_ref().unwrap();
            let p = truth.patch.unwrap();
            let mean_hr = truth.mean_hr(0, truth.true_hr_profile.len()) / 60.0;
            assert!((p.freq_hz - mean_hr).abs() >= 0.2);
            assert!((40.0 / 60.0..=250.0 / 60.0).contains(&p.freq_hz));
        }
    }

    #[test]
    fn gt_window_aligns_with_video() {
        let rec = generate_corpus(&small(2)).unwrap().remove(0);
        assert!(rec.gt_start_s < 0.0);
        let w = rec.gt_window(0, 300).unwrap().unwrap();
        let margin = (-rec.gt_start_s * 30.0).round() as usize;
        assert_eq!(w.values(), &rec.gt.as_ref().unwrap().values()[margin..margin + 300]);
    }
}

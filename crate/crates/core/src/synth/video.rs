use ndarray::{s, Array4, ArrayView4};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Side of the crop box relative to the first frame's vertical landmark range.
pub const CROP_SCALE: f64 = 1.2;
/// Default side of the resized face crop.
pub const CROP_SIZE: usize = 128;

/// `T x H x W x 3` video with 8-bit samples; sample `v` encodes the value
/// `v / 255` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    frames: Array4<u8>,
    fps: f64,
}

impl VideoClip {
    pub fn new(frames: Array4<u8>, fps: f64) -> Result<Self> {
        let (t, h, w, c) = frames.dim();
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidInput(format!("fps must be positive, got {fps}")));
        }
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 color channels, got {c}")));
        }
        if h < 16 || w < 16 {
            return Err(Error::Shape(format!("frames must be at least 16x16, got {h}x{w}")));
        }
        if (t as f64) < 2.0 * fps - 1e-9 {
            return Err(Error::Shape(format!(
                "clip must last at least 2 s: {t} frames at {fps} fps"
            )));
        }
        Ok(Self {
            frames: frames.as_standard_layout().to_owned(),
            fps,
        })
    }

    pub fn frames(&self) -> ArrayView4<'_, u8> {
        self.frames.view()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.dim().1
    }

    pub fn width(&self) -> usize {
        self.frames.dim().2
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fps
    }

    pub fn raw(&self) -> &[u8] {
        self.frames.as_slice().expect("standard layout")
    }

    /// Frames `[start, start + len)` as a new clip.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::InvalidInput(format!(
                "frame range {start}..{} exceeds clip length {}",
                start + len,
                self.len()
            )));
        }
        Self::new(
            self.frames.slice(s![start..start + len, .., .., ..]).to_owned(),
            self.fps,
        )
    }

    /// Model input layout `C x T x H x W` scaled to `[0, 1]`, for frames
    /// `[start, start + len)`.
    pub fn to_tensor<T: Scalar>(&self, start: usize, len: usize) -> Array4<T> {
        let (_, h, w, c) = self.frames.dim();
        let lut: Vec<T> = (0..=255u32).map(|v| T::of(v as f64 / 255.0)).collect();
        let mut out = Array4::<T>::zeros((c, len, h, w));
        for t in 0..len {
            let frame = self.frames.slice(s![start + t, .., .., ..]);
            for ((y, x, ch), &v) in frame.indexed_iter() {
                out[[ch, t, y, x]] = lut[v as usize];
            }
        }
        out
    }

    /// Mean value (in `[0, 1]`) of channel `ch` over the pixels selected by
    /// `mask` (row-major `H x W`), per frame.
    pub fn masked_mean(&self, mask: &[bool], ch: usize) -> Vec<f64> {
        let (t, h, w, _) = self.frames.dim();
        assert_eq!(mask.len(), h * w, "mask size");
        let count = mask.iter().filter(|&&m| m).count().max(1) as f64;
        (0..t)
            .map(|i| {
                let mut acc = 0u64;
                for y in 0..h {
                    for x in 0..w {
                        if mask[y * w + x] {
                            acc += self.frames[[i, y, x, ch]] as u64;
                        }
                    }
                }
                acc as f64 / 255.0 / count
            })
            .collect()
    }
}

/// Per-frame facial landmark coordinates `(x, y)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSequence {
    frames: Vec<Vec<(f64, f64)>>,
}

impl LandmarkSequence {
    pub fn new(frames: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InvalidLandmarks("no frames".into()));
        };
        let count = first.len();
        if count == 0 {
            return Err(Error::InvalidLandmarks("no landmarks in first frame".into()));
        }
        if let Some(i) = frames.iter().position(|f| f.len() != count) {
            return Err(Error::InvalidLandmarks(format!(
                "frame {i} has {} landmarks, expected {count}",
                frames[i].len()
            )));
        }
        Ok(Self { frames })
    }

    /// The same landmark set repeated for `n` frames.
    pub fn repeated(points: Vec<(f64, f64)>, n: usize) -> Result<Self> {
        Self::new(vec![points; n])
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[(f64, f64)] {
        &self.frames[i]
    }
}

/// Square crop region in source pixel coordinates (after clamping the box may
/// be narrower than `side` along an axis that is smaller than the box).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

fn extent(points: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    points.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(xl, xh, yl, yh), &(x, y)| (xl.min(x), xh.max(x), yl.min(y), yh.max(y)),
    )
}

fn clamp_axis(center: f64, side: f64, limit: f64) -> (f64, f64) {
    if side >= limit {
        (0.0, limit)
    } else {
        ((center - side / 2.0).clamp(0.0, limit - side), side)
    }
}

/// Crop boxes for every frame: centered on the midpoint of the landmark
/// extremes, side fixed by the first frame's vertical landmark range.
pub fn crop_boxes(landmarks: &LandmarkSequence, width: usize, height: usize) -> Result<Vec<CropBox>> {
    let (_, _, y_lo, y_hi) = extent(landmarks.frame(0));
    let side = CROP_SCALE * (y_hi - y_lo);
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::InvalidLandmarks(
            "zero vertical landmark range in first frame".into(),
        ));
    }
    (0..landmarks.len())
        .map(|i| {
            let pts = landmarks.frame(i);
            if pts
                .iter()
                .any(|&(x, y)| !(0.0..=width as f64).contains(&x) || !(0.0..=height as f64).contains(&y))
            {
                return Err(Error::InvalidLandmarks(format!(
                    "frame {i} has landmarks outside the frame"
                )));
            }
            let (xl, xh, yl, yh) = extent(pts);
            let (x0, bw) = clamp_axis((xl + xh) / 2.0, side, width as f64);
            let (y0, bh) = clamp_axis((yl + yh) / 2.0, side, height as f64);
            Ok(CropBox {
                x0,
                y0,
                width: bw,
                height: bh,
            })
        })
        .collect()
}

/// Crops the face in every frame and resizes it to `out_size x out_size` by
/// bilinear interpolation (half-pixel centers, edge clamping).
pub fn crop_face(video: &VideoClip, landmarks: &LandmarkSequence, out_size: usize) -> Result<VideoClip> {
    if landmarks.len() < video.len() {
        return Err(Error::InvalidLandmarks(format!(
            "{} landmark frames for {} video frames",
            landmarks.len(),
            video.len()
        )));
    }
    let boxes = crop_boxes(landmarks, video.width(), video.height())?;
    let (t, h, w, c) = video.frames.dim();
    let mut out = Array4::<u8>::zeros((t, out_size, out_size, c));
    let src = video.raw();
    for (i, b) in boxes.iter().enumerate().take(t) {
        let frame = &src[i * h * w * c..(i + 1) * h * w * c];
        let sy = b.height / out_size as f64;
        let sx = b.width / out_size as f64;
        for oy in 0..out_size {
            let fy = (b.y0 + (oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f64;
            for ox in 0..out_size {
                let fx = (b.x0 + (ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f64;
                for ch in 0..c {
                    let p = |y: usize, x: usize| frame[(y * w + x) * c + ch] as f64;
                    let top = p(y0, x0) * (1.0 - wx) + p(y0, x1) * wx;
                    let bot = p(y1, x0) * (1.0 - wx) + p(y1, x1) * wx;
                    let v = top * (1.0 - wy) + bot * wy;
                    out[[i, oy, ox, ch]] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    VideoClip::new(out, video.fps)
}

/// Applies the crop geometry of [`crop_face`] to a single-channel map
/// (e.g. a skin mask), returning an `out_size x out_size` map sampled at
/// the nearest source pixel of the first frame's box.
pub fn crop_map(map: &[f64], width: usize, height: usize, b: &CropBox, out_size: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_size * out_size];
    for oy in 0..out_size {
        let fy = (b.y0 + (oy as f64 + 0.5) * b.height / out_size as f64 - 0.5)
            .round()
            .clamp(0.0, (height - 1) as f64) as usize;
        for ox in 0..out_size {
            let fx = (b.x0 + (ox as f64 + 0.5) * b.width / out_size as f64 - 0.5)
                .round()
                .clamp(0.0, (width - 1) as f64) as usize;
            out[oy * out_size + ox] = map[fy * width + fx];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank(t: usize, h: usize, w: usize) -> VideoClip {
        VideoClip::new(Array4::from_elem((t, h, w, 3), 100u8), 30.0).unwrap()
    }

    fn rect(cx: f64, y_lo: f64, y_hi: f64) -> Vec<(f64, f64)> {
        vec![
            (cx - 30.0, y_lo),
            (cx + 30.0, y_lo),
            (cx, y_hi),
            (cx - 10.0, (y_lo + y_hi) / 2.0),
        ]
    }

    fn narrow(cx: f64, y_lo: f64, y_hi: f64) -> Vec<(f64, f64)> {
        vec![(cx - 8.0, y_lo), (cx + 8.0, y_lo), (cx, y_hi)]
    }

    #[test]
    fn static_landmarks_give_fixed_box() {
        let lm = LandmarkSequence::repeated(rect(100.0, 20.0, 120.0), 60).unwrap();
        let boxes = crop_boxes(&lm, 200, 200).unwrap();
        assert!(boxes
            .iter()
            .all(|b| (b.width - 120.0).abs() < 1e-9 && (b.height - 120.0).abs() < 1e-9));
        assert!(boxes.iter().all(|b| *b == boxes[0]));
        assert!((boxes[0].x0 - 40.0).abs() < 1e-9 && (boxes[0].y0 - 10.0).abs() < 1e-9);
    }

    #[test]
    fn box_tracks_translation_with_fixed_side() {
        let frames: Vec<_> = (0..10).map(|i| rect(60.0 + 10.0 * i as f64, 40.0, 90.0)).collect();
        let lm = LandmarkSequence::new(frames).unwrap();
        let boxes = crop_boxes(&lm, 400, 200).unwrap();
        for (i, b) in boxes.iter().enumerate() {
            assert!((b.width - 60.0).abs() < 1e-9);
            assert!((b.x0 + b.width / 2.0 - (60.0 + 10.0 * i as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn box_is_clamped_at_frame_edge() {
        let lm = LandmarkSequence::repeated(rect(35.0, 5.0, 70.0), 64).unwrap();
        let v = blank(64, 80, 80);
        let boxes = crop_boxes(&lm, 80, 80).unwrap();
        assert!(boxes[0].x0 >= 0.0 && boxes[0].y0 >= 0.0);
        assert!(boxes[0].x0 + boxes[0].width <= 80.0 && boxes[0].y0 + boxes[0].height <= 80.0);
        let out = crop_face(&v, &lm, 128).unwrap();
        assert_eq!(out.frames().dim(), (64, 128, 128, 3));
    }

    #[test]
    fn degenerate_landmarks_rejected() {
        let lm = LandmarkSequence::repeated(vec![(10.0, 20.0), (30.0, 20.0)], 64).unwrap();
        assert!(matches!(
            crop_face(&blank(64, 40, 40), &lm, 32),
            Err(Error::InvalidLandmarks(_))
        ));
    }

    #[test]
    fn crop_is_deterministic() {
        let mut frames = Array4::<u8>::zeros((64, 40, 40, 3));
        for ((t, y, x, c), v) in frames.indexed_iter_mut() {
            *v = ((t * 7 + y * 3 + x * 5 + c) % 251) as u8;
        }
        let v = VideoClip::new(frames, 30.0).unwrap();
        let lm = LandmarkSequence::repeated(narrow(20.0, 8.0, 30.0), 64).unwrap();
        assert_eq!(crop_face(&v, &lm, 32).unwrap(), crop_face(&v, &lm, 32).unwrap());
    }

    #[test]
    fn uniform_frame_stays_uniform() {
        let lm = LandmarkSequence::repeated(narrow(20.0, 8.0, 30.0), 64).unwrap();
        let out = crop_face(&blank(64, 40, 40), &lm, 48).unwrap();
        assert!(out.raw().iter().all(|&v| v == 100));
    }

    #[test]
    fn clip_invariants() {
        assert!(VideoClip::new(Array4::zeros((59, 16, 16, 3)), 30.0).is_err());
        assert!(VideoClip::new(Array4::zeros((60, 15, 16, 3)), 30.0).is_err());
        assert!(VideoClip::new(Array4::zeros((60, 16, 16, 1)), 30.0).is_err());
        assert!(VideoClip::new(Array4::zeros((60, 16, 16, 3)), 30.0).is_ok());
    }
}

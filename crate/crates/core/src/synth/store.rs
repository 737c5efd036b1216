use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array4;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::render::{LabeledRecord, PatchGeom, SkinEllipse, TruthMeta};
use super::video::VideoClip;
use crate::error::{Error, Result};
use crate::signal::Signal;

const FRAMES: &str = "frames.bin";
const GT: &str = "gt.csv";
const META: &str = "meta.json";

#[derive(Serialize, Deserialize)]
struct Meta {
    phi: bool,
    desync_offset_s: f64,
    gt_start_s: f64,
    true_hr_profile: Option<Vec<f64>>,
    skin_mask: Option<SkinEllipse>,
    patch: Option<PatchGeom>,
}

fn record_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("record_{i:04}"))
}

/// Writes one directory per record under `root` (created if missing).
pub fn store_dataset(root: &Path, records: &[LabeledRecord]) -> Result<()> {
    fs::create_dir_all(root)?;
    for (i, rec) in records.iter().enumerate() {
        rec.check()?;
        let dir = record_dir(root, i);
        fs::create_dir_all(&dir)?;
        write_frames(&dir.join(FRAMES), &rec.video)?;
        let gt_path = dir.join(GT);
        match &rec.gt {
            Some(gt) => gt.write_csv(BufWriter::new(File::create(&gt_path)?), rec.gt_start_s)?,
            None if gt_path.exists() => fs::remove_file(&gt_path)?,
            None => {}
        }
        let meta = Meta {
            phi: rec.phi,
            desync_offset_s: rec.desync_offset_s,
            gt_start_s: rec.gt_start_s,
            true_hr_profile: rec.truth.as_ref().map(|t| t.true_hr_profile.clone()),
            skin_mask: rec.truth.as_ref().map(|t| t.skin_mask),
            patch: rec.truth.as_ref().and_then(|t| t.patch),
        };
        let mut w = BufWriter::new(File::create(dir.join(META))?);
        serde_json::to_writer_pretty(&mut w, &meta)?;
        w.flush()?;
    }
    Ok(())
}

fn write_frames(path: &Path, video: &VideoClip) -> Result<()> {
    let (t, h, w, c) = video.frames().dim();
    let mut out = BufWriter::new(File::create(path)?);
    let header = json!({"T": t, "H": h, "W": w, "C": c, "fps": video.fps()});
    writeln!(out, "{header}")?;
    match video.frames().as_slice() {
        Some(raw) => out.write_all(raw)?,
        None => {
            let raw: Vec<u8> = video.frames().iter().copied().collect();
            out.write_all(&raw)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_frames(path: &Path) -> Result<VideoClip> {
    let mut rd = BufReader::new(File::open(path)?);
    let mut line = String::new();
    rd.read_line(&mut line)?;
    let header: Value =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::format(path, "header", e.to_string()))?;
    let dim = |key: &str| -> Result<usize> {
        header
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::format(path, key, "missing or not a non-negative integer"))
    };
    let (t, h, w, c) = (dim("T")?, dim("H")?, dim("W")?, dim("C")?);
    let fps = header
        .get("fps")
        .and_then(Value::as_f64)
        .filter(|f| f.is_finite() && *f > 0.0)
        .ok_or_else(|| Error::format(path, "fps", "missing or not a positive number"))?;
    if c != 3 {
        return Err(Error::format(path, "C", format!("expected 3 channels, found {c}")));
    }
    let mut raw = Vec::new();
    rd.read_to_end(&mut raw)?;
    let expected = t * h * w * c;
    if raw.len() != expected {
        return Err(Error::format(
            path,
            "T",
            format!("header promises {expected} bytes of frames, payload has {}", raw.len()),
        ));
    }
    let frames = Array4::from_shape_vec((t, h, w, c), raw).map_err(|e| Error::format(path, "T", e.to_string()))?;
    VideoClip::new(frames, fps).map_err(|e| Error::format(path, "T", e.to_string()))
}

/// Loads every `record_*` directory under `root`, in name order.
pub fn load_dataset(root: &Path) -> Result<Vec<LabeledRecord>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("record_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no record directories in {}",
            root.display()
        )));
    }
    dirs.iter().map(|d| load_record(d)).collect()
}

pub fn load_record(dir: &Path) -> Result<LabeledRecord> {
    let video = read_frames(&dir.join(FRAMES))?;
    let meta_path = dir.join(META);
    let meta: Meta = serde_json::from_reader(BufReader::new(File::open(&meta_path)?))
        .map_err(|e| Error::format(&meta_path, "meta", e.to_string()))?;
    let gt_path = dir.join(GT);
    let gt = if meta.phi {
        if !gt_path.exists() {
            return Err(Error::MissingLabel(dir.to_path_buf()));
        }
        let (sig, t0) = Signal::<f64>::read_csv(BufReader::new(File::open(&gt_path)?))
            .map_err(|e| Error::format(&gt_path, "value", e.to_string()))?;
        if (sig.fps() - video.fps()).abs() > 1e-6 * video.fps() {
            return Err(Error::format(
                &gt_path,
                "time_s",
                format!("sampled at {} Hz but video runs at {} Hz", sig.fps(), video.fps()),
            ));
        }
        if (t0 - meta.gt_start_s).abs() > 1e-9 {
            return Err(Error::format(
                &gt_path,
                "time_s",
                "first timestamp disagrees with meta.json",
            ));
        }
        Some(Signal::new(sig.into_values(), video.fps())?)
    } else {
        None
    };
    let truth = match (meta.true_hr_profile, meta.skin_mask) {
        (Some(true_hr_profile), Some(skin_mask)) => Some(TruthMeta {
            true_hr_profile,
            skin_mask,
            patch: meta.patch,
        }),
        _ => None,
    };
    Ok(LabeledRecord {
        video,
        gt,
        gt_start_s: meta.gt_start_s,
        phi: meta.phi,
        desync_offset_s: meta.desync_offset_s,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, mask_labels, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus() -> Vec<LabeledRecord> {
        let cfg = SynthConfig {
            n_videos: 3,
            duration_s: 3.0,
            width: 24,
            height: 24,
            ..SynthConfig::default()
        };
        generate_corpus(&cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let recs = mask_labels(corpus(), 0.67, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        store_dataset(dir.path(), &recs).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), recs);
    }

    #[test]
    fn corrupted_header_names_field() {
        let dir = tempfile::tempdir().unwrap();
        store_dataset(dir.path(), &corpus()).unwrap();
        let p = dir.path().join("record_0001").join(FRAMES);
        let bytes = fs::read(&p).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header = String::from_utf8(bytes[..nl].to_vec())
            .unwrap()
            .replace("\"W\"", "\"Wx\"");
        let mut out = header.into_bytes();
        out.extend_from_slice(&bytes[nl..]);
        fs::write(&p, out).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "W"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn missing_gt_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        store_dataset(dir.path(), &corpus()).unwrap();
        fs::remove_file(dir.path().join("record_0002").join(GT)).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingLabel(_))));
    }
}

use rand::seq::SliceRandom;
use rand::Rng;

use super::render::LabeledRecord;
use crate::error::{Error, Result};

/// Keeps the ground truth on exactly `round(ratio * n)` rng-chosen records
/// and strips it from the rest. Records that arrive unlabeled stay unlabeled.
pub fn mask_labels<R: Rng + ?Sized>(
    mut records: Vec<LabeledRecord>,
    ratio: f64,
    rng: &mut R,
) -> Result<Vec<LabeledRecord>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidConfig(format!("label ratio {ratio} outside [0, 1]")));
    }
    let keep = (ratio * records.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(rng);
    for &i in &order[keep..] {
        records[i].gt = None;
        records[i].phi = false;
    }
    Ok(records)
}

/// Shifts the ground truth of `record` by a random offset
/// `u ~ Uniform(-d_max, d_max)`, snapped to the frame grid, and cuts it to
/// the video length. The label for frame `i` becomes the original GT at
/// time `i / fps + u`.
pub fn apply_desync<R: Rng + ?Sized>(mut record: LabeledRecord, d_max_s: f64, rng: &mut R) -> Result<LabeledRecord> {
    if !(d_max_s >= 0.0) {
        return Err(Error::InvalidConfig(format!("d_max {d_max_s} must be non-negative")));
    }
    if d_max_s == 0.0 {
        return Ok(record);
    }
    let Some(gt) = record.gt.take() else {
        return Err(Error::InvalidInput("desync needs a ground-truth signal".into()));
    };
    let fps = record.video.fps();
    let n = record.video.len();
    let lead = (-record.gt_start_s * fps).round() as i64;
    let tail = gt.len() as i64 - lead - n as i64;
    let reach = (d_max_s * fps + 1e-9).floor() as i64;
    if lead < reach || tail < reach {
        return Err(Error::Margin {
            needed_s: d_max_s,
            available_s: lead.min(tail) as f64 / fps,
        });
    }
    let u = rng.random_range(-d_max_s..=d_max_s);
    let k = ((u * fps).round() as i64).clamp(-reach, reach);
    let start = (lead + k) as usize;
    record.gt = Some(gt.window(start, n)?);
    record.gt_start_s = 0.0;
    record.desync_offset_s = k as f64 / fps;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus(n: usize) -> Vec<LabeledRecord> {
        generate_corpus(&SynthConfig {
            n_videos: n,
            duration_s: 4.0,
            width: 16,
            height: 16,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn ratio_extremes_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let none = mask_labels(corpus(3), 0.0, &mut rng).unwrap();
        assert!(none.iter().all(|r| !r.phi && r.gt.is_none()));
        let all = mask_labels(corpus(3), 1.0, &mut rng).unwrap();
        assert!(all.iter().all(|r| r.phi && r.gt.is_some()));
        let some = mask_labels(corpus(10), 0.2, &mut rng).unwrap();
        assert_eq!(some.iter().filter(|r| r.phi).count(), 2);
        assert!(some.iter().all(|r| r.check().is_ok()));
    }

    #[test]
    fn zero_dmax_is_identity() {
        let rec = corpus(1).remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(apply_desync(rec.clone(), 0.0, &mut rng).unwrap(), rec);
    }

    #[test]
    fn offset_bounded_reproducible_and_consistent() {
        let rec = corpus(1).remove(0);
        for seed in 0..20 {
            let a = apply_desync(rec.clone(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = apply_desync(rec.clone(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a, b);
            assert!(a.desync_offset_s.abs() <= 1.0);
            let gt = a.gt.as_ref().unwrap();
            assert_eq!(gt.len(), a.video.len());
            let k = (a.desync_offset_s * 30.0).round() as i64;
            let lead = (-rec.gt_start_s * 30.0).round() as i64;
            let orig = rec.gt.as_ref().unwrap().values();
            assert_eq!(gt.values()[0], orig[(lead + k) as usize]);
        }
    }

    #[test]
    fn insufficient_margin_is_reported() {
        let rec = corpus(1).remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(apply_desync(rec, 3.0, &mut rng), Err(Error::Margin { .. })));
    }
}

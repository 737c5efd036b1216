use rand::Rng;

use crate::error::{Error, Result};
use crate::signal::Signal;
use crate::synth::{LabeledRecord, VideoClip};

/// One clip of a training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub record: usize,
    /// First frame of the clip inside its video.
    pub start: usize,
    pub clip: VideoClip,
    /// Ground truth over exactly the clip interval, when labeled.
    pub gt: Option<Signal<f64>>,
}

/// Two clips of `clip_len_s` seconds from two distinct records, each at a
/// uniformly random offset.
pub fn make_pair_batch<R: Rng + ?Sized>(
    records: &[LabeledRecord],
    clip_len_s: f64,
    rng: &mut R,
) -> Result<[BatchItem; 2]> {
    if records.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "a training pair needs at least 2 videos, have {}",
            records.len()
        )));
    }
    let a = rng.random_range(0..records.len());
    let mut b = rng.random_range(0..records.len() - 1);
    if b >= a {
        b += 1;
    }
    Ok([item(records, a, clip_len_s, rng)?, item(records, b, clip_len_s, rng)?])
}

fn item<R: Rng + ?Sized>(records: &[LabeledRecord], i: usize, clip_len_s: f64, rng: &mut R) -> Result<BatchItem> {
    let rec = &records[i];
    let len = (clip_len_s * rec.video.fps()).round() as usize;
    if len < 2 || len > rec.video.len() {
        return Err(Error::InvalidConfig(format!(
            "clip of {clip_len_s} s does not fit video {i} of {} s",
            rec.video.duration_s()
        )));
    }
    let start = rng.random_range(0..=rec.video.len() - len);
    Ok(BatchItem {
        record: i,
        start,
        clip: rec.video.slice(start, len)?,
        gt: rec.gt_window(start, len)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, mask_labels, SynthConfig};
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
    fn two_records_both_used() {
        let recs = corpus(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let [a, b] = make_pair_batch(&recs, 2.0, &mut rng).unwrap();
            assert_eq!(a.record + b.record, 1);
            assert_eq!(a.clip.len(), 60);
            let gt = a.gt.unwrap();
            assert_eq!(gt, recs[a.record].gt_window(a.start, 60).unwrap().unwrap());
        }
    }

    #[test]
    fn indices_distinct_and_reproducible() {
        let recs = mask_labels(corpus(10), 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| {
                    let [a, b] = make_pair_batch(&recs, 3.0, &mut rng).unwrap();
                    assert_ne!(a.record, b.record);
                    assert_eq!(a.gt.is_some(), recs[a.record].phi);
                    (a.record, a.start, b.record, b.start)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
    }

    #[test]
    fn short_videos_rejected() {
        let recs = corpus(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            make_pair_batch(&recs, 5.0, &mut rng),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            make_pair_batch(&recs[..1], 1.0, &mut rng),
            Err(Error::InvalidConfig(_))
        ));
    }
}

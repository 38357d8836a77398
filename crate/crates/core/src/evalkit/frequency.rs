use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::featstore::TruthRecord;
use crate::numkit::Rng;
use crate::scorer::MomentPrediction;

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyCell {
    /// `st_bin · n_bins + ed_bin`.
    pub index: usize,
    pub count: usize,
    /// Mean normalized start and exclusive end of the cell's members.
    pub st: f64,
    pub ed: f64,
}

/// Predicts the most frequent normalized start-end cells of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBaseline {
    pub n_bins: usize,
    /// Cells ranked by count descending, then index ascending.
    pub cells: Vec<FrequencyCell>,
}

impl FrequencyBaseline {
    pub const DEFAULT_BINS: usize = 20;

    /// `spans` are `(start, end)` divided by video duration, in `[0, 1]`.
    pub fn fit(spans: &[(f64, f64)], n_bins: usize) -> Result<Self> {
        if spans.is_empty() {
            return Err(Error::Empty("training spans"));
        }
        if n_bins == 0 {
            return Err(Error::InvalidArgument("n_bins must be positive".into()));
        }
        let bin = |x: f64| ((x.clamp(0.0, 1.0) * n_bins as f64).floor() as usize).min(n_bins - 1);
        let mut acc: HashMap<usize, (usize, f64, f64)> = HashMap::new();
        for &(s, e) in spans {
            let cell = acc.entry(bin(s) * n_bins + bin(e)).or_default();
            cell.0 += 1;
            cell.1 += s;
            cell.2 += e;
        }
        let mut cells: Vec<FrequencyCell> = acc
            .into_iter()
            .map(|(index, (count, s, e))| FrequencyCell {
                index,
                count,
                st: s / count as f64,
                ed: e / count as f64,
            })
            .collect();
        cells.sort_by(|a, b| b.count.cmp(&a.count).then(a.index.cmp(&b.index)));
        Ok(FrequencyBaseline { n_bins, cells })
    }

    /// Normalizes ground-truth spans by their video's duration.
    pub fn fit_truths(truths: &[TruthRecord], durations: &HashMap<String, f64>, n_bins: usize) -> Result<Self> {
        let spans = truths
            .iter()
            .filter_map(|t| {
                let d = *durations.get(&t.video_id)?;
                Some((t.ts[0] / d, t.ts[1] / d))
            })
            .collect::<Vec<_>>();
        Self::fit(&spans, n_bins)
    }

    /// Top `k` cells rescaled to a video of `n_clips` clips, as inclusive
    /// clip spans. Cells are reused cyclically when `k` exceeds their number.
    pub fn predict_clips(&self, n_clips: usize, k: usize) -> Vec<(usize, usize)> {
        let l = n_clips as f64;
        (0..k)
            .map(|r| {
                let c = &self.cells[r % self.cells.len()];
                let st = ((c.st * l).round() as usize).min(n_clips - 1);
                let ed_excl = ((c.ed * l).round() as usize).min(n_clips);
                (st, ed_excl.saturating_sub(1).max(st))
            })
            .collect()
    }

    /// VCMR predictions: rank `r` takes the `r`-th cell in a uniformly random
    /// video. `videos` holds `(video_id, n_clips)`.
    pub fn predict_corpus(&self, rng: &mut Rng, videos: &[(String, usize)], k: usize) -> Vec<MomentPrediction> {
        (0..k)
            .map(|r| {
                let (vid, l) = &videos[rng.below(videos.len())];
                let c = &self.cells[r % self.cells.len()];
                let (t_st, t_ed) = FrequencyBaseline {
                    n_bins: self.n_bins,
                    cells: vec![c.clone()],
                }
                .predict_clips(*l, 1)[0];
                MomentPrediction {
                    video_id: vid.clone(),
                    t_st,
                    t_ed,
                    score: 1.0 / (r + 1) as f64,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass() {
        let f = FrequencyBaseline::fit(&[(0.1, 0.4); 30], 20).unwrap();
        assert_eq!(f.cells.len(), 1);
        assert_eq!(f.predict_clips(20, 3), vec![(2, 7); 3]);
        assert_eq!(f.predict_clips(10, 1), vec![(1, 3)]);
    }

    #[test]
    fn uniform_ties_by_index() {
        let spans: Vec<(f64, f64)> = (0..4).map(|i| (i as f64 * 0.25 + 0.01, i as f64 * 0.25 + 0.2)).collect();
        let f = FrequencyBaseline::fit(&spans, 4).unwrap();
        let idx: Vec<usize> = f.cells.iter().map(|c| c.index).collect();
        assert_eq!(idx, vec![0, 5, 10, 15]);
    }

    #[test]
    fn skewed_sample_concentrates_near_start() {
        let mut rng = Rng::new(4);
        let spans: Vec<(f64, f64)> = (0..500)
            .map(|i| {
                if i % 5 == 0 {
                    let s = rng.next_f64() * 0.8;
                    (s, s + 0.2)
                } else {
                    let s = rng.next_f64() * 0.05;
                    (s, s + 0.1 + rng.next_f64() * 0.04)
                }
            })
            .collect();
        let f = FrequencyBaseline::fit(&spans, 20).unwrap();
        for (st, _) in f.predict_clips(100, 3) {
            assert!(st <= 5, "start {st}");
        }
        let corpus = vec![("a".to_string(), 20), ("b".to_string(), 30)];
        let preds = f.predict_corpus(&mut rng, &corpus, 5);
        assert_eq!(preds.len(), 5);
        assert!(preds.windows(2).all(|w| w[0].score > w[1].score));
        assert!(FrequencyBaseline::fit(&[], 20).is_err());
    }
}

//! Baseline moment generators over a query-clip score signal: multi-scale
//! sliding windows and TAG-style threshold grouping.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub t_st: usize,
    pub t_ed: usize,
    pub score: f64,
}

/// Which head turns a similarity signal into moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentGenerator {
    #[default]
    ConvSe,
    SlidingWindow,
    Tag,
}

impl FromStr for MomentGenerator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convse" => Ok(MomentGenerator::ConvSe),
            "sliding_window" => Ok(MomentGenerator::SlidingWindow),
            "tag" => Ok(MomentGenerator::Tag),
            other => Err(Error::InvalidArgument(format!(
                "unknown moment generator {other:?} (expected convse, sliding_window or tag)"
            ))),
        }
    }
}

impl fmt::Display for MomentGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MomentGenerator::ConvSe => "convse",
            MomentGenerator::SlidingWindow => "sliding_window",
            MomentGenerator::Tag => "tag",
        })
    }
}

/// Default scales give 90 proposals on a 51-clip video, close to the
/// reference density of 87.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindowConfig {
    pub scales: Vec<usize>,
    pub stride_frac: f64,
}

impl Default for SlidingWindowConfig {
    fn default() -> Self {
        SlidingWindowConfig {
            scales: vec![2, 4, 8, 16],
            stride_frac: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagConfig {
    pub n_thresholds: usize,
    pub min_len: usize,
}

impl Default for TagConfig {
    fn default() -> Self {
        TagConfig {
            n_thresholds: 8,
            min_len: 1,
        }
    }
}

/// Windows of each scale `w` stepped by `max(1, round(w·stride_frac))`.
///
/// Only windows that fit inside `[0, l−1]` are produced; a scale longer than
/// the video collapses to the full video. Output is unique, ordered by scale
/// then start.
pub fn sliding_window_proposals(l: usize, scales: &[usize], stride_frac: f64) -> Vec<Proposal> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    if l == 0 {
        return out;
    }
    for &w in scales {
        let w = w.clamp(1, l);
        let step = ((w as f64 * stride_frac).round() as usize).max(1);
        let mut st = 0;
        while st + w <= l {
            if seen.insert((st, st + w - 1)) {
                out.push(Proposal {
                    t_st: st,
                    t_ed: st + w - 1,
                    score: 0.0,
                });
            }
            st += step;
        }
    }
    out
}

fn order(a: &Proposal, b: &Proposal) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.t_st.cmp(&b.t_st))
        .then(a.t_ed.cmp(&b.t_ed))
}

/// Scores each proposal by the mean of `scores` over its clips and returns the
/// best `k`.
pub fn rank_proposals_avg(scores: &[f64], proposals: &[Proposal], k: usize) -> Vec<Proposal> {
    let mut prefix = Vec::with_capacity(scores.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for s in scores {
        acc += s;
        prefix.push(acc);
    }
    let mut ranked: Vec<Proposal> = proposals
        .iter()
        .filter(|p| p.t_st <= p.t_ed && p.t_ed < scores.len())
        .map(|p| Proposal {
            score: mean(scores, &prefix, p.t_st, p.t_ed),
            ..*p
        })
        .collect();
    ranked.sort_by(order);
    ranked.truncate(k);
    ranked
}

fn mean(scores: &[f64], prefix: &[f64], st: usize, ed: usize) -> f64 {
    let n = (ed - st + 1) as f64;
    // short spans are summed directly so small means stay exact
    if ed - st < 32 {
        scores[st..=ed].iter().sum::<f64>() / n
    } else {
        (prefix[ed + 1] - prefix[st]) / n
    }
}

/// Threshold grouping on min-max normalized scores.
///
/// Thresholds are `τ_i = i/(n+1)` for `i = 1..=n`. At each level the maximal
/// runs of clips with normalized score `≥ τ` and length `≥ min_len` become
/// proposals, scored by the mean raw score of the run. A constant signal
/// normalizes to all ones and yields the full video.
pub fn tag_group(scores: &[f64], n_thresholds: usize, min_len: usize) -> Result<Vec<Proposal>> {
    if n_thresholds == 0 {
        return Err(Error::InvalidArgument("n_thresholds must be at least 1".into()));
    }
    let thresholds: Vec<f64> = (1..=n_thresholds)
        .map(|i| i as f64 / (n_thresholds + 1) as f64)
        .collect();
    Ok(tag_group_at(scores, &thresholds, min_len))
}

/// [`tag_group`] with an explicit threshold grid.
pub fn tag_group_at(scores: &[f64], thresholds: &[f64], min_len: usize) -> Vec<Proposal> {
    let l = scores.len();
    if l == 0 {
        return Vec::new();
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm: Vec<f64> = if hi - lo > 0.0 {
        scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; l]
    };
    let mut prefix = vec![0.0];
    for s in scores {
        prefix.push(prefix.last().unwrap() + s);
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for &tau in thresholds {
        let mut t = 0;
        while t < l {
            if norm[t] < tau {
                t += 1;
                continue;
            }
            let st = t;
            while t < l && norm[t] >= tau {
                t += 1;
            }
            let ed = t - 1;
            if ed - st + 1 >= min_len.max(1) && seen.insert((st, ed)) {
                out.push(Proposal {
                    t_st: st,
                    t_ed: ed,
                    score: mean(scores, &prefix, st, ed),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spans(p: &[Proposal]) -> Vec<(usize, usize)> {
        p.iter().map(|p| (p.t_st, p.t_ed)).collect()
    }

    #[test]
    fn sliding_window_cases() {
        assert_eq!(spans(&sliding_window_proposals(4, &[2], 0.5)), vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(spans(&sliding_window_proposals(9, &[9], 0.5)), vec![(0, 8)]);
        assert_eq!(spans(&sliding_window_proposals(5, &[30], 0.5)), vec![(0, 4)]);
    }

    #[test]
    fn sliding_window_density() {
        let d = SlidingWindowConfig::default();
        let n = sliding_window_proposals(51, &d.scales, d.stride_frac).len();
        assert_eq!(n, 90);
        assert!((n as f64 - 87.0).abs() / 87.0 < 0.05);
        // the even-scale grid at half stride is far denser
        let even: Vec<usize> = (2..=16).step_by(2).collect();
        assert_eq!(sliding_window_proposals(51, &even, 0.5).len(), 128);
    }

    #[test]
    fn rank_cases() {
        let props = sliding_window_proposals(6, &[2, 3], 0.5);
        let flat = rank_proposals_avg(&[0.3; 6], &props, 100);
        let mut expected = spans(&props);
        expected.sort();
        assert_eq!(spans(&flat), expected);

        let mut one_hot = vec![0.0; 10];
        one_hot[6] = 1.0;
        let w3 = sliding_window_proposals(10, &[3], 0.34);
        let best = rank_proposals_avg(&one_hot, &w3, 1)[0];
        assert!(best.t_st <= 6 && 6 <= best.t_ed);
        assert_eq!((best.t_st, best.t_ed), (4, 6));
    }

    #[test]
    fn tag_cases() {
        let p = tag_group_at(&[0.0, 1.0, 1.0, 0.0], &[0.5], 1);
        assert_eq!(spans(&p), vec![(1, 2)]);
        assert_eq!(p[0].score, 1.0);

        let dec: Vec<f64> = (0..12).map(|i| 12.0 - i as f64).collect();
        let p = tag_group(&dec, 8, 1).unwrap();
        assert!(!p.is_empty());
        assert!(p.iter().all(|p| p.t_st == 0));

        let flat = tag_group(&[2.0; 5], 4, 1).unwrap();
        assert_eq!(spans(&flat), vec![(0, 4)]);
        assert!(tag_group(&[1.0], 0, 1).is_err());
    }

    #[test]
    fn generator_parse() {
        for g in [MomentGenerator::ConvSe, MomentGenerator::SlidingWindow, MomentGenerator::Tag] {
            assert_eq!(g.to_string().parse::<MomentGenerator>().unwrap(), g);
        }
        assert!("nms".parse::<MomentGenerator>().is_err());
    }

    proptest! {
        #[test]
        fn rank_matches_loop_mean(scores in prop::collection::vec(-2.0f64..2.0, 1..60)) {
            let l = scores.len();
            let props = sliding_window_proposals(l, &[1, 2, 5, 40], 0.5);
            for p in rank_proposals_avg(&scores, &props, usize::MAX) {
                let mut s = 0.0;
                for t in p.t_st..=p.t_ed { s += scores[t]; }
                prop_assert!((p.score - s / (p.t_ed - p.t_st + 1) as f64).abs() < 1e-12);
            }
        }

        #[test]
        fn proposals_unique_and_in_range(l in 1usize..60, stride in 0.05f64..1.0) {
            let props = sliding_window_proposals(l, &[2, 3, 7, 16, 16], stride);
            let set: HashSet<_> = spans(&props).into_iter().collect();
            prop_assert_eq!(set.len(), props.len());
            prop_assert!(props.iter().all(|p| p.t_st <= p.t_ed && p.t_ed < l));
        }

        #[test]
        fn tag_nesting_and_refinement(scores in prop::collection::vec(-3.0f64..3.0, 1..40), n in 1usize..6) {
            let coarse = tag_group(&scores, n, 1).unwrap();
            let fine = tag_group(&scores, 2 * n + 1, 1).unwrap();
            // τ_i = i/(n+1) equals τ_{2i} = 2i/(2n+2) only on the grid 2n+1
            let fine_set: HashSet<_> = spans(&fine).into_iter().collect();
            for c in spans(&coarse) {
                prop_assert!(fine_set.contains(&c));
            }
            let taus = [0.2, 0.7];
            let low = tag_group_at(&scores, &taus[..1], 1);
            let high = tag_group_at(&scores, &taus[1..], 1);
            for h in &high {
                prop_assert!(low.iter().any(|p| p.t_st <= h.t_st && h.t_ed <= p.t_ed));
            }
        }
    }
}

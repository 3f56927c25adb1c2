//! Biometric error metrics over score sets.
//!
//! Decision rule everywhere: predict Attack iff score >= threshold (ties
//! count as attack). APCER(t) is the fraction of attack entries scored
//! below t (missed attacks); BPCER(t) is the fraction of bona fide entries
//! scored at or above t (false alarms); HTER is their mean.
//!
//! The EER operating point sweeps every distinct score and the midpoints
//! between neighbours, and returns the threshold minimizing |APCER - BPCER|
//! (ties broken toward the lower threshold). On finite sets an exact
//! crossing rarely exists, so this is a minimizer, not an interpolation.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::MiniPadNet;
use crate::synth::{Dataset, Group, Label};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreEntry {
    pub score: f64,
    pub label: Label,
    pub group: Group,
    pub sample_id: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ScoreSet {
    pub entries: Vec<ScoreEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub eer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRates {
    pub apcer: f64,
    pub bpcer: f64,
    pub hter: f64,
}

impl ScoreSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries restricted to one group, for per-group metrics.
    pub fn for_group(&self, group: Group) -> ScoreSet {
        ScoreSet {
            entries: self
                .entries
                .iter()
                .filter(|e| e.group == group)
                .copied()
                .collect(),
        }
    }

    fn split_scores(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut attacks = Vec::new();
        let mut bona = Vec::new();
        for e in &self.entries {
            if !e.score.is_finite() {
                return Err(Error::NonFinite("score"));
            }
            match e.label {
                Label::Attack => attacks.push(e.score),
                Label::BonaFide => bona.push(e.score),
            }
        }
        if attacks.is_empty() || bona.is_empty() {
            return Err(Error::SingleLabel);
        }
        Ok((attacks, bona))
    }
}

/// Scores every sample with the model, preserving dataset order. Safe to
/// parallelize: the model is immutable and results are collected by index.
pub fn score_dataset(model: &MiniPadNet, data: &Dataset) -> Result<ScoreSet> {
    let entries: Result<Vec<ScoreEntry>> = data
        .samples
        .par_iter()
        .map(|s| {
            Ok(ScoreEntry {
                score: model.score(&s.image)?,
                label: s.label,
                group: s.group,
                sample_id: s.id,
            })
        })
        .collect();
    Ok(ScoreSet { entries: entries? })
}

fn rates_at(attacks: &[f64], bona: &[f64], threshold: f64) -> ErrorRates {
    // counts are exact integers; only the final divisions round
    let missed = attacks.iter().filter(|s| **s < threshold).count();
    let false_alarms = bona.iter().filter(|s| **s >= threshold).count();
    let apcer = missed as f64 / attacks.len() as f64;
    let bpcer = false_alarms as f64 / bona.len() as f64;
    ErrorRates {
        apcer,
        bpcer,
        hter: (apcer + bpcer) / 2.0,
    }
}

/// APCER/BPCER/HTER at a fixed threshold.
pub fn error_rates_at(scores: &ScoreSet, threshold: f64) -> Result<ErrorRates> {
    if !threshold.is_finite() {
        return Err(Error::NonFinite("threshold"));
    }
    let (attacks, bona) = scores.split_scores()?;
    Ok(rates_at(&attacks, &bona, threshold))
}

/// Candidate thresholds for the EER sweep: every distinct score plus the
/// midpoint between each pair of neighbours, ascending.
fn sweep_candidates(scores: &ScoreSet) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.entries.iter().map(|e| e.score).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let mut candidates = Vec::with_capacity(distinct.len() * 2);
    for (i, &s) in distinct.iter().enumerate() {
        candidates.push(s);
        if let Some(&next) = distinct.get(i + 1) {
            candidates.push((s + next) / 2.0);
        }
    }
    candidates
}

/// Threshold minimizing |APCER - BPCER| over the sweep, lower threshold on
/// ties; `eer` is the mean of the two rates there.
pub fn eer_operating_point(scores: &ScoreSet) -> Result<OperatingPoint> {
    let (attacks, bona) = scores.split_scores()?;
    let mut best: Option<(f64, OperatingPoint)> = None;
    for t in sweep_candidates(scores) {
        let rates = rates_at(&attacks, &bona, t);
        let gap = (rates.apcer - rates.bpcer).abs();
        // strict < keeps the lowest threshold among ties because
        // candidates are visited in ascending order
        if best.map_or(true, |(best_gap, _)| gap < best_gap) {
            best = Some((
                gap,
                OperatingPoint {
                    threshold: t,
                    eer: rates.hter,
                },
            ));
        }
    }
    Ok(best.expect("candidates are non-empty for a non-empty set").1)
}

/// Writes the scores table: `sample_id,group,label,score` with six decimal
/// places, one header row, rows in entry order.
pub fn write_scores_csv(scores: &ScoreSet, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "sample_id,group,label,score")?;
    for e in &scores.entries {
        writeln!(w, "{},{},{},{:.6}", e.sample_id, e.group, e.label, e.score)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;

    fn set_from(bona: &[f64], attacks: &[f64]) -> ScoreSet {
        let mut entries = Vec::new();
        for (i, &s) in bona.iter().enumerate() {
            entries.push(ScoreEntry {
                score: s,
                label: Label::BonaFide,
                group: Group::A,
                sample_id: i as u64,
            });
        }
        for (i, &s) in attacks.iter().enumerate() {
            entries.push(ScoreEntry {
                score: s,
                label: Label::Attack,
                group: Group::B,
                sample_id: (bona.len() + i) as u64,
            });
        }
        ScoreSet { entries }
    }

    /// Brute-force reference: same candidate rule, same tie-break, written
    /// as the most literal possible double loop.
    fn oracle_eer(scores: &ScoreSet) -> OperatingPoint {
        let mut candidates = sweep_candidates(scores);
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best_gap = f64::INFINITY;
        let mut best = OperatingPoint {
            threshold: 0.0,
            eer: 0.0,
        };
        for t in candidates {
            let mut missed = 0usize;
            let mut attacks = 0usize;
            let mut alarms = 0usize;
            let mut bona = 0usize;
            for e in &scores.entries {
                match e.label {
                    Label::Attack => {
                        attacks += 1;
                        if e.score < t {
                            missed += 1;
                        }
                    }
                    Label::BonaFide => {
                        bona += 1;
                        if e.score >= t {
                            alarms += 1;
                        }
                    }
                }
            }
            let apcer = missed as f64 / attacks as f64;
            let bpcer = alarms as f64 / bona as f64;
            let gap = (apcer - bpcer).abs();
            if gap < best_gap {
                best_gap = gap;
                best = OperatingPoint {
                    threshold: t,
                    eer: (apcer + bpcer) / 2.0,
                };
            }
        }
        best
    }

    #[test]
    fn separable_sets_reach_zero_eer() {
        let scores = set_from(&[0.1, 0.2], &[0.8, 0.9]);
        let op = eer_operating_point(&scores).unwrap();
        assert_eq!(op.eer, 0.0);
        assert!(op.threshold > 0.2 && op.threshold <= 0.8);
        let rates = error_rates_at(&scores, op.threshold).unwrap();
        assert_eq!((rates.apcer, rates.bpcer, rates.hter), (0.0, 0.0, 0.0));
    }

    // Interleaved scores BF={0.1,0.6}, AT={0.4,0.9}. Enumerating every
    // candidate: t=0.5 and t=0.6 both give APCER=BPCER=0.5 (gap 0), every
    // other candidate has gap >= 0.5. Lower-threshold tie-break picks
    // t=0.5, where the EER is 0.5.
    #[test]
    fn interleaved_sets_follow_the_sweep_rule() {
        let scores = set_from(&[0.1, 0.6], &[0.4, 0.9]);
        let op = eer_operating_point(&scores).unwrap();
        assert_eq!(op.threshold, 0.5);
        assert_eq!(op.eer, 0.5);
        assert_eq!(op, oracle_eer(&scores));
    }

    #[test]
    fn identical_distributions_give_half_eer() {
        let same = [0.2, 0.4, 0.6, 0.8];
        let scores = set_from(&same, &same);
        let op = eer_operating_point(&scores).unwrap();
        // with fully identical multisets the crossing is exact
        assert_eq!(op.eer, 0.5);
    }

    #[test]
    fn trivial_rate_cases() {
        let perfect = set_from(&[0.0, 0.0, 0.0], &[1.0, 1.0]);
        let r = error_rates_at(&perfect, 0.5).unwrap();
        assert_eq!((r.apcer, r.bpcer, r.hter), (0.0, 0.0, 0.0));

        let inverted = set_from(&[1.0, 1.0], &[0.0, 0.0, 0.0]);
        let r = error_rates_at(&inverted, 0.5).unwrap();
        assert_eq!((r.apcer, r.bpcer, r.hter), (1.0, 1.0, 1.0));
    }

    #[test]
    fn ties_at_threshold_count_as_attack() {
        // bona fide exactly at the threshold is a false alarm; attack
        // exactly at the threshold is caught
        let scores = set_from(&[0.5], &[0.5]);
        let r = error_rates_at(&scores, 0.5).unwrap();
        assert_eq!(r.apcer, 0.0);
        assert_eq!(r.bpcer, 1.0);
    }

    #[test]
    fn randomized_sets_match_the_brute_force_oracle() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(2024);
        for round in 0..100 {
            let n_bona = 1 + rng.next_below(40) as usize;
            let n_attack = 1 + rng.next_below(40) as usize;
            // coarse score grid so duplicate scores and threshold ties occur
            let draw = |rng: &mut Xoshiro256StarStar| (rng.next_below(21) as f64) / 20.0;
            let bona: Vec<f64> = (0..n_bona).map(|_| draw(&mut rng)).collect();
            let attacks: Vec<f64> = (0..n_attack).map(|_| draw(&mut rng)).collect();
            let scores = set_from(&bona, &attacks);

            let op = eer_operating_point(&scores).unwrap();
            let oracle = oracle_eer(&scores);
            assert_eq!(op, oracle, "sweep disagrees with oracle in round {round}");

            // HTER identity at arbitrary thresholds
            let t = draw(&mut rng);
            let r = error_rates_at(&scores, t).unwrap();
            assert_eq!(r.hter, (r.apcer + r.bpcer) / 2.0);
        }
    }

    #[test]
    fn rates_are_monotone_in_threshold() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(55);
        let bona: Vec<f64> = (0..30).map(|_| rng.next_f64()).collect();
        let attacks: Vec<f64> = (0..30).map(|_| rng.next_f64() * 0.6 + 0.4).collect();
        let scores = set_from(&bona, &attacks);
        let mut prev: Option<ErrorRates> = None;
        for t in sweep_candidates(&scores) {
            let r = error_rates_at(&scores, t).unwrap();
            if let Some(p) = prev {
                assert!(r.apcer >= p.apcer, "APCER must not decrease");
                assert!(r.bpcer <= p.bpcer, "BPCER must not increase");
            }
            prev = Some(r);
        }
    }

    #[test]
    fn entry_order_is_irrelevant() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(9);
        let bona: Vec<f64> = (0..25).map(|_| rng.next_f64()).collect();
        let attacks: Vec<f64> = (0..25).map(|_| rng.next_f64()).collect();
        let scores = set_from(&bona, &attacks);
        let op = eer_operating_point(&scores).unwrap();
        let mut shuffled = scores.clone();
        rng.shuffle(&mut shuffled.entries);
        assert_eq!(eer_operating_point(&shuffled).unwrap(), op);
    }

    #[test]
    fn degenerate_sets_are_rejected() {
        let empty = ScoreSet::default();
        assert!(matches!(
            eer_operating_point(&empty),
            Err(Error::EmptyDataset)
        ));
        let single = set_from(&[0.3, 0.4], &[]);
        assert!(matches!(
            eer_operating_point(&single),
            Err(Error::SingleLabel)
        ));
        assert!(matches!(
            error_rates_at(&single, 0.5),
            Err(Error::SingleLabel)
        ));
    }

    #[test]
    fn scores_csv_has_header_and_six_decimals() {
        let scores = set_from(&[0.125], &[0.987654321]);
        let mut buf = Vec::new();
        write_scores_csv(&scores, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_id,group,label,score");
        assert_eq!(lines[1], "0,A,bona_fide,0.125000");
        assert_eq!(lines[2], "1,B,attack,0.987654");
    }
}

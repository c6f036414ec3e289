//! Triples of drawings (one per stimulus) that are scored together for
//! flexibility.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::style::Stimulus;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    /// A human participant; their own three drawings form the set.
    Participant(String),
    /// A generation prompt; sets are sampled from its drawings.
    Prompt(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlexibilityCandidate {
    pub drawing_id: String,
    pub owner: Owner,
    pub stimulus: Stimulus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlexibilitySet {
    pub set_id: String,
    /// Drawing ids in stimulus order G, I, R.
    pub drawing_ids: [String; 3],
    pub owner: Owner,
    /// Position of this set among the prompt's samples; `None` for participants.
    pub sample: Option<usize>,
    /// Per-rater scores in [0, 2].
    pub scores: Vec<f64>,
}

impl FlexibilitySet {
    /// Mean over raters, if any scored the set.
    pub fn mean_score(&self) -> Option<f64> {
        (!self.scores.is_empty()).then(|| self.scores.iter().sum::<f64>() / self.scores.len() as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FlexibilitySets {
    pub sets: Vec<FlexibilitySet>,
    /// Owners left out, with the reason.
    pub skipped: Vec<(Owner, String)>,
}

fn stimulus_slot(s: Stimulus) -> usize {
    match s {
        Stimulus::G => 0,
        Stimulus::I => 1,
        Stimulus::R => 2,
    }
}

/// Participants contribute their own triple. Each prompt's drawings are
/// shuffled per stimulus and zipped, so every drawing lands in exactly one
/// set. Owners that cannot form complete triples are skipped with a warning.
pub fn build_flexibility_sets(candidates: &[FlexibilityCandidate], seed: u64) -> FlexibilitySets {
    let mut by_owner: BTreeMap<&Owner, [Vec<&str>; 3]> = BTreeMap::new();
    for c in candidates {
        by_owner.entry(&c.owner).or_default()[stimulus_slot(c.stimulus)].push(&c.drawing_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FlexibilitySets::default();
    for (owner, mut slots) in by_owner {
        match owner {
            Owner::Participant(pid) => {
                if slots.iter().any(|s| s.len() != 1) {
                    let counts = slots.iter().map(Vec::len).collect::<Vec<_>>();
                    let reason = format!("expected one drawing per stimulus, got G/I/R = {counts:?}");
                    log::warn!("flexibility: skipping participant {pid}: {reason}");
                    out.skipped.push((owner.clone(), reason));
                    continue;
                }
                out.sets.push(FlexibilitySet {
                    set_id: pid.clone(),
                    drawing_ids: slots.map(|s| s[0].to_string()),
                    owner: owner.clone(),
                    sample: None,
                    scores: Vec::new(),
                });
            }
            Owner::Prompt(prompt) => {
                for s in slots.iter_mut() {
                    s.sort_unstable();
                    s.shuffle(&mut rng);
                }
                let n = slots.iter().map(Vec::len).min().unwrap_or(0);
                if slots.iter().any(|s| s.len() != n) || n == 0 {
                    let counts = slots.iter().map(Vec::len).collect::<Vec<_>>();
                    let reason = format!("unequal or empty stimulus counts G/I/R = {counts:?}; using {n} sets");
                    log::warn!("flexibility: prompt {prompt}: {reason}");
                    out.skipped.push((owner.clone(), reason));
                }
                for i in 0..n {
                    out.sets.push(FlexibilitySet {
                        set_id: format!("{prompt}#{i:02}"),
                        drawing_ids: [0, 1, 2].map(|k| slots[k][i].to_string()),
                        owner: owner.clone(),
                        sample: Some(i),
                        scores: Vec::new(),
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: String, owner: Owner, stimulus: Stimulus) -> FlexibilityCandidate {
        FlexibilityCandidate { drawing_id: id, owner, stimulus }
    }

    fn ai_corpus(prompts: usize, per: usize) -> Vec<FlexibilityCandidate> {
        let mut v = Vec::new();
        for p in 0..prompts {
            for s in Stimulus::ALL {
                for i in 0..per {
                    v.push(cand(format!("p{p}_{s}_{i:02}"), Owner::Prompt(format!("prompt{p}")), s));
                }
            }
        }
        v
    }

    #[test]
    fn humans_one_set_per_participant() {
        let mut c = Vec::new();
        for p in 0..148 {
            for s in Stimulus::ALL {
                c.push(cand(format!("a{p}{s}"), Owner::Participant(format!("a{p:03}")), s));
            }
        }
        let out = build_flexibility_sets(&c, 0);
        assert_eq!(out.sets.len(), 148);
        assert!(out.skipped.is_empty());
        assert_eq!(out.sets[0].drawing_ids, ["a0G".to_string(), "a0I".into(), "a0R".into()]);
    }

    #[test]
    fn incomplete_participant_skipped() {
        let c = vec![
            cand("x1".into(), Owner::Participant("x".into()), Stimulus::G),
            cand("x2".into(), Owner::Participant("x".into()), Stimulus::I),
            cand("y1".into(), Owner::Participant("y".into()), Stimulus::G),
            cand("y2".into(), Owner::Participant("y".into()), Stimulus::I),
            cand("y3".into(), Owner::Participant("y".into()), Stimulus::R),
        ];
        let out = build_flexibility_sets(&c, 0);
        assert_eq!(out.sets.len(), 1);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].0, Owner::Participant("x".into()));
    }

    #[test]
    fn ai_sets_cover_corpus_once() {
        let c = ai_corpus(3, 50);
        let out = build_flexibility_sets(&c, 7);
        assert_eq!(out.sets.len(), 150);
        let mut used: Vec<&str> = out.sets.iter().flat_map(|s| s.drawing_ids.iter().map(String::as_str)).collect();
        used.sort_unstable();
        let mut all: Vec<&str> = c.iter().map(|c| c.drawing_id.as_str()).collect();
        all.sort_unstable();
        assert_eq!(used, all);
        for s in &out.sets {
            for (k, stim) in Stimulus::ALL.iter().enumerate() {
                assert!(s.drawing_ids[k].contains(&format!("_{stim}_")));
            }
        }
    }

    #[test]
    fn seeded_determinism() {
        let c = ai_corpus(2, 10);
        assert_eq!(build_flexibility_sets(&c, 3), build_flexibility_sets(&c, 3));
        assert_ne!(build_flexibility_sets(&c, 3).sets, build_flexibility_sets(&c, 4).sets);
    }

    #[test]
    fn mean_score_over_raters() {
        let mut s = build_flexibility_sets(&ai_corpus(1, 1), 0).sets.remove(0);
        assert_eq!(s.mean_score(), None);
        s.scores = vec![1.0, 2.0];
        assert_eq!(s.mean_score(), Some(1.5));
    }
}

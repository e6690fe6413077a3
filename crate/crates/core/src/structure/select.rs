//! Choosing a truncation depth by AIC or by validation macro-F1.

use serde::{Deserialize, Serialize};

use super::{truncate, LearnedStructure};
use crate::batch::Batch;
use crate::disc_learn::{fit_discriminative, GradConfig};
use crate::error::{Result, SpnError};
use crate::gen_learn::{fit_generative, EmConfig};
use crate::metrics::{macro_f1, predict_all};
use crate::scalar::Real;
use crate::spn::write_model;

#[derive(Debug, Clone, Copy)]
pub enum TruncationMode<'a, F> {
    /// Generative fit on `(x, y)`, score `2k - 2 LL`, lower is better.
    Aic { x: &'a [Vec<F>], y: &'a [usize], em: EmConfig },
    /// Discriminative fit on `(x, y)`, macro-F1 on `(val_x, val_y)`, higher is better.
    Validation { x: &'a [Vec<F>], y: &'a [usize], val_x: &'a [Vec<F>], val_y: &'a [usize], grad: GradConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub depth: usize,
    pub free_params: usize,
    /// Training log-likelihood (AIC mode only).
    pub log_likelihood: Option<f64>,
    pub score: f64,
}

/// `1..=max_depth` of the learned network.
pub fn candidate_depths<F: Real>(learned: &LearnedStructure<F>) -> Vec<usize> {
    (1..=learned.spn.max_depth().max(1)).collect()
}

/// Scores each candidate depth and returns the best one (ties go to the smaller depth) with the
/// full score table. Depths that truncate to the same network share one fit.
pub fn select_truncation<F: Real>(
    learned: &LearnedStructure<F>,
    candidates: &[usize],
    mode: &TruncationMode<'_, F>,
) -> Result<(usize, Vec<CandidateScore>)> {
    if candidates.is_empty() {
        return Err(SpnError::Config("no truncation candidates".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut table: Vec<CandidateScore> = Vec::with_capacity(sorted.len());
    let mut last: Option<(String, CandidateScore)> = None;
    for &depth in &sorted {
        let t = truncate(learned, depth);
        let text = write_model(&t.spn);
        if let Some((prev, score)) = &last {
            if *prev == text {
                table.push(CandidateScore { depth, ..score.clone() });
                continue;
            }
        }
        let mut spn = t.spn;
        let entry = match mode {
            TruncationMode::Aic { x, y, em } => {
                let report = fit_generative(&mut spn, &Batch::supervised(x, y)?, em)?;
                let ll = report.objective.as_f64();
                let k = spn.free_parameter_count();
                CandidateScore { depth, free_params: k, log_likelihood: Some(ll), score: 2.0 * k as f64 - 2.0 * ll }
            }
            TruncationMode::Validation { x, y, val_x, val_y, grad } => {
                fit_discriminative(&mut spn, &Batch::supervised(x, y)?, grad)?;
                let pred = predict_all(&spn, val_x)?;
                let f1 = macro_f1(val_y, &pred, spn.num_classes())?;
                CandidateScore { depth, free_params: spn.free_parameter_count(), log_likelihood: None, score: f1 }
            }
        };
        table.push(entry.clone());
        last = Some((text, entry));
    }
    let lower_is_better = matches!(mode, TruncationMode::Aic { .. });
    let mut best = &table[0];
    for c in &table[1..] {
        let better = if lower_is_better { c.score < best.score } else { c.score > best.score };
        if better {
            best = c;
        }
    }
    Ok((best.depth, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{learn_structure, StructureConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_candidate_is_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<Vec<f64>> = (0..60).map(|_| vec![n.sample(&mut rng), n.sample(&mut rng)]).collect();
        let y: Vec<usize> = (0..60).map(|i| i % 2).collect();
        let l = learn_structure(&x, &y, &[], 2, &StructureConfig::default()).unwrap();
        let mode = TruncationMode::Aic { x: &x, y: &y, em: EmConfig::default() };
        assert_eq!(select_truncation(&l, &[3], &mode).unwrap().0, 3);
        assert!(select_truncation(&l, &[], &mode).is_err());
    }
}

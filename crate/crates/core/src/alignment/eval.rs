use serde::Serialize;

use super::{Alignment, GoldAlignment};
use crate::error::{Error, Result};

/// Link counts; corpus scores sum these before dividing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AlignmentCounts {
    pub predicted: usize,
    pub predicted_in_possible: usize,
    pub sure: usize,
    pub predicted_in_sure: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl AlignmentCounts {
    pub fn of(predicted: &Alignment, gold: &GoldAlignment) -> Self {
        AlignmentCounts {
            predicted: predicted.links.len(),
            predicted_in_possible: predicted
                .links
                .iter()
                .filter(|l| gold.possible.contains(l))
                .count(),
            sure: gold.sure.len(),
            predicted_in_sure: predicted.links.iter().filter(|l| gold.sure.contains(l)).count(),
        }
    }

    pub fn add(&mut self, other: AlignmentCounts) {
        self.predicted += other.predicted;
        self.predicted_in_possible += other.predicted_in_possible;
        self.sure += other.sure;
        self.predicted_in_sure += other.predicted_in_sure;
    }

    /// Precision against possible links, recall against sure links. An empty
    /// prediction has precision 0; no sure links gives recall 0.
    pub fn scores(&self) -> F1Scores {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.predicted_in_possible, self.predicted);
        let recall = ratio(self.predicted_in_sure, self.sure);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        F1Scores {
            precision,
            recall,
            f1,
        }
    }
}

pub fn alignment_f1(predicted: &Alignment, gold: &GoldAlignment) -> F1Scores {
    AlignmentCounts::of(predicted, gold).scores()
}

/// Micro-averaged scores over sentence pairs.
pub fn corpus_f1(predicted: &[Alignment], gold: &[GoldAlignment]) -> Result<(F1Scores, AlignmentCounts)> {
    if predicted.len() != gold.len() {
        return Err(Error::lengths(
            "predicted vs gold sentence pairs",
            predicted.len(),
            gold.len(),
        ));
    }
    let mut total = AlignmentCounts::default();
    for (p, g) in predicted.iter().zip(gold) {
        total.add(AlignmentCounts::of(p, g));
    }
    Ok((total.scores(), total))
}

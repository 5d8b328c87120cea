use serde::{Deserialize, Serialize};

/// Edit operations of an optimal alignment between a reference and a hypothesis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlignmentCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub correct: usize,
}

impl AlignmentCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn reference_len(&self) -> usize {
        self.substitutions + self.deletions + self.correct
    }

    pub fn hypothesis_len(&self) -> usize {
        self.substitutions + self.insertions + self.correct
    }
}

/// Cost of a partial alignment, ordered by edits and then by fewest matches lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Score {
    edits: u32,
    neg_matches: i32,
}

impl Score {
    const ZERO: Score = Score { edits: 0, neg_matches: 0 };

    fn step(self, edit: bool, matched: bool) -> Score {
        Score {
            edits: self.edits + u32::from(edit),
            neg_matches: self.neg_matches - i32::from(matched),
        }
    }
}

/// Rows up to this length live on the stack.
const STACK_ROW: usize = 64;

/// Minimum-edit-distance alignment with unit costs.
///
/// Among alignments of minimal cost the one with the most matches is chosen,
/// which in turn fixes the number of substitutions, deletions and insertions.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> AlignmentCounts {
    let n = reference.len();
    let m = hypothesis.len();
    let mut stack = [Score::ZERO; 2 * STACK_ROW];
    let mut heap = Vec::new();
    let rows: &mut [Score] = if m < STACK_ROW {
        &mut stack[..2 * (m + 1)]
    } else {
        heap.resize(2 * (m + 1), Score::ZERO);
        &mut heap
    };
    let (mut prev, mut curr) = rows.split_at_mut(m + 1);
    for (j, s) in prev.iter_mut().enumerate() {
        s.edits = j as u32;
    }
    for i in 1..=n {
        curr[0] = Score { edits: i as u32, neg_matches: 0 };
        for j in 1..=m {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diagonal = prev[j - 1].step(!same, same);
            let deletion = prev[j].step(true, false);
            let insertion = curr[j - 1].step(true, false);
            curr[j] = diagonal.min(deletion).min(insertion);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    let best = prev[m];
    let edits = best.edits as usize;
    let correct = (-best.neg_matches) as usize;
    // With C fixed: S + D = n - C, S + I = m - C and S + D + I = edits.
    let insertions = edits + correct - n;
    let deletions = insertions + n - m;
    let substitutions = n - correct - deletions;
    AlignmentCounts {
        substitutions,
        deletions,
        insertions,
        correct,
    }
}

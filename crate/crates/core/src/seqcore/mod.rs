//! DNA sequences, base-editor substitution rules, edit masks and outcome enumeration.
//!
//! Positions are 0-based in the API and 1-based in every message and file.

mod nucleotide;
mod outcome;
mod reference;

use thiserror::Error;

use crate::numcore::Tensor;

pub use nucleotide::{bases_to_string, parse_bases, EditorClass, EditorKind, Nucleotide};
pub use outcome::{
    diff_positions, edit_mask, enumerate_edit_sets, enumerate_outcomes, EditMask, EditSet,
    EditWindow, OutcomeSequence, DEFAULT_ENUMERATION_CAP,
};
pub use reference::{
    parse_sequence, ReferenceSequence, RepresentationMode, MAX_SEQ_LEN, OVERHANG_LEN, PAM_LEN,
    PROTOSPACER_LEN,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeqError {
    #[error("invalid character {found:?} at position {position}")]
    InvalidCharacter { position: usize, found: char },
    #[error("length mismatch: expected {expected} bases, found {found} (first offending position {position})")]
    LengthMismatch {
        expected: usize,
        found: usize,
        position: usize,
    },
    #[error("{part} has length {found}, allowed {allowed:?}")]
    PartLength {
        part: &'static str,
        found: usize,
        allowed: Vec<usize>,
    },
    #[error("representation mode {mode} requires the {part}")]
    MissingPart {
        part: &'static str,
        mode: RepresentationMode,
    },
    #[error("unknown representation mode {0:?}")]
    UnknownMode(String),
    #[error("edit window {start}:{end} is outside protospacer positions 1:20")]
    WindowOutOfRange { start: usize, end: usize },
    #[error("cannot parse edit window {0:?}, expected A:B")]
    BadWindowSyntax(String),
    #[error("too many target bases: k={k} exceeds the enumeration cap {cap}")]
    TooManyTargetBases { k: usize, cap: usize },
    #[error("illegal outcome at position {position}: {reason}")]
    IllegalOutcome {
        position: usize,
        reason: &'static str,
    },
}

/// T x 4 one-hot matrix with columns A, C, G, T.
pub fn one_hot(bases: &[Nucleotide]) -> Tensor {
    let mut data = vec![0.0; bases.len() * 4];
    for (t, b) in bases.iter().enumerate() {
        data[t * 4 + b.index()] = 1.0;
    }
    Tensor::from_vec(vec![bases.len(), 4], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_hot_single_base() {
        let t = one_hot(&parse_bases("A").unwrap());
        assert_eq!(t.shape(), &[1, 4]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn one_hot_acgt_is_identity() {
        let t = one_hot(&parse_bases("ACGT").unwrap());
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        assert_eq!(t.data(), eye.as_slice());
    }

    fn bases_strategy(len: usize) -> impl Strategy<Value = Vec<Nucleotide>> {
        proptest::collection::vec(0usize..4, len).prop_map(|v| {
            v.into_iter()
                .map(|i| Nucleotide::from_index(i).unwrap())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn one_hot_rows_sum_to_one(bases in bases_strategy(24)) {
            let t = one_hot(&bases);
            for row in t.data().chunks(4) {
                prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
                prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            }
        }

        #[test]
        fn one_hot_is_injective(a in bases_strategy(12), b in bases_strategy(12)) {
            prop_assert_eq!(a == b, one_hot(&a) == one_hot(&b));
        }

        #[test]
        fn enumerated_outcomes_are_legal(bases in bases_strategy(20)) {
            let r = ReferenceSequence::new(vec![], bases, vec![], vec![], RepresentationMode::Protospacer).unwrap();
            let mask = edit_mask(&r, EditorClass::ABE, EditWindow::full());
            prop_assume!(mask.count() <= 10);
            let outs = enumerate_outcomes(&r, EditorClass::ABE, EditWindow::full(), true, 16).unwrap();
            prop_assert_eq!(outs.len(), 1usize << mask.count());
            let mut seen = std::collections::HashSet::new();
            for o in &outs {
                prop_assert!(seen.insert(o.edits()));
                let reparsed = OutcomeSequence::from_bases(&r, EditorClass::ABE, o.bases().to_vec()).unwrap();
                prop_assert_eq!(reparsed.edits(), o.edits());
                for t in diff_positions(&r, o).unwrap() {
                    prop_assert!(mask.flags()[t]);
                }
            }
        }
    }
}

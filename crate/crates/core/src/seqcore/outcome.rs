use std::fmt;
use std::str::FromStr;

use super::nucleotide::{bases_to_string, parse_bases, EditorClass, Nucleotide};
use super::reference::{ReferenceSequence, PROTOSPACER_LEN};
use super::SeqError;

/// Default limit on the number of editable bases handled by enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 16;

/// Inclusive, 1-based protospacer position range in which the deaminase acts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EditWindow {
    start: usize,
    end: usize,
}

impl EditWindow {
    pub fn new(start: usize, end: usize) -> Result<Self, SeqError> {
        if start < 1 || end > PROTOSPACER_LEN || start > end {
            return Err(SeqError::WindowOutOfRange { start, end });
        }
        Ok(EditWindow { start, end })
    }

    pub fn full() -> Self {
        EditWindow {
            start: 1,
            end: PROTOSPACER_LEN,
        }
    }

    pub fn start(self) -> usize {
        self.start
    }

    pub fn end(self) -> usize {
        self.end
    }

    /// Whether 0-based protospacer index `p` lies inside the window.
    #[inline]
    pub fn contains_index(self, p: usize) -> bool {
        p + 1 >= self.start && p < self.end
    }
}

impl Default for EditWindow {
    fn default() -> Self {
        Self::full()
    }
}

impl fmt::Display for EditWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl FromStr for EditWindow {
    type Err = SeqError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SeqError::BadWindowSyntax(s.to_string());
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let a = a.trim().parse().map_err(|_| bad())?;
        let b = b.trim().parse().map_err(|_| bad())?;
        EditWindow::new(a, b)
    }
}

/// Set of edited protospacer positions, stored as a bit set over 0-based indices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EditSet(u32);

impl EditSet {
    pub const EMPTY: EditSet = EditSet(0);

    pub fn from_bits(bits: u32) -> Self {
        EditSet(bits)
    }

    pub fn from_positions(positions: impl IntoIterator<Item = usize>) -> Self {
        EditSet(positions.into_iter().fold(0, |acc, p| acc | (1 << p)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn contains(self, p: usize) -> bool {
        p < 32 && self.0 & (1 << p) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// 0-based protospacer positions in ascending order.
    pub fn positions(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&p| self.0 & (1 << p) != 0)
    }

    /// 1-based comma separated list, `-` when empty.
    pub fn to_display_list(self) -> String {
        if self.is_empty() {
            return "-".to_string();
        }
        self.positions()
            .map(|p| (p + 1).to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Flattened positions a given editor could touch. `flags[t]` is set iff the
/// reference holds the source base at `t` and `t` is a protospacer position inside the window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditMask {
    flags: Vec<bool>,
    offset: usize,
}

impl EditMask {
    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Number of editable positions (k).
    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Editable positions as 0-based protospacer indices, ascending.
    pub fn protospacer_positions(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(t, _)| t - self.offset)
            .collect()
    }

    /// Offset of protospacer index 0 in the flattened sequence.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn as_edit_set(&self) -> EditSet {
        EditSet::from_positions(self.protospacer_positions())
    }
}

pub fn edit_mask(
    reference: &ReferenceSequence,
    editor: EditorClass,
    window: EditWindow,
) -> EditMask {
    let offset = reference.mode().protospacer_offset();
    let mut flags = vec![false; reference.seq_len()];
    for (p, &base) in reference.protospacer().iter().enumerate() {
        if base == editor.source_base() && window.contains_index(p) {
            flags[offset + p] = true;
        }
    }
    EditMask { flags, offset }
}

/// A candidate product of editing a reference.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OutcomeSequence {
    bases: Vec<Nucleotide>,
    edits: EditSet,
}

impl OutcomeSequence {
    /// Apply `edits` (0-based protospacer positions) to the reference.
    pub fn from_edits(
        reference: &ReferenceSequence,
        editor: EditorClass,
        edits: EditSet,
    ) -> Result<Self, SeqError> {
        let offset = reference.mode().protospacer_offset();
        let mut bases = reference.bases();
        for p in edits.positions() {
            if p >= PROTOSPACER_LEN || reference.protospacer()[p] != editor.source_base() {
                return Err(SeqError::IllegalOutcome {
                    position: offset + p + 1,
                    reason: "edit at a position not holding the source base",
                });
            }
            bases[offset + p] = editor.target_base();
        }
        Ok(OutcomeSequence { bases, edits })
    }

    pub fn wild_type(reference: &ReferenceSequence) -> Self {
        OutcomeSequence {
            bases: reference.bases(),
            edits: EditSet::EMPTY,
        }
    }

    /// Parse a flattened outcome string and check that it is a legal edit of `reference`.
    pub fn parse(
        reference: &ReferenceSequence,
        editor: EditorClass,
        text: &str,
    ) -> Result<Self, SeqError> {
        let bases = parse_bases(text.trim())?;
        Self::from_bases(reference, editor, bases)
    }

    pub fn from_bases(
        reference: &ReferenceSequence,
        editor: EditorClass,
        bases: Vec<Nucleotide>,
    ) -> Result<Self, SeqError> {
        let ref_bases = reference.bases();
        if bases.len() != ref_bases.len() {
            return Err(SeqError::LengthMismatch {
                expected: ref_bases.len(),
                found: bases.len(),
                position: bases.len().min(ref_bases.len()) + 1,
            });
        }
        let offset = reference.mode().protospacer_offset();
        let mut edits = EditSet::EMPTY;
        for (t, (&r, &o)) in ref_bases.iter().zip(&bases).enumerate() {
            if r == o {
                continue;
            }
            if t < offset || t >= offset + PROTOSPACER_LEN {
                return Err(SeqError::IllegalOutcome {
                    position: t + 1,
                    reason: "edit outside the protospacer",
                });
            }
            if r != editor.source_base() || o != editor.target_base() {
                return Err(SeqError::IllegalOutcome {
                    position: t + 1,
                    reason: "substitution not produced by this editor",
                });
            }
            edits = EditSet::from_bits(edits.bits() | (1 << (t - offset)));
        }
        Ok(OutcomeSequence { bases, edits })
    }

    pub fn bases(&self) -> &[Nucleotide] {
        &self.bases
    }

    pub fn edits(&self) -> EditSet {
        self.edits
    }

    pub fn is_wild_type(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn to_text(&self) -> String {
        bases_to_string(&self.bases)
    }
}

impl fmt::Display for OutcomeSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Edit sets for every combination of editable positions, in binary counting
/// order over the ascending editable positions (bit j of the counter selects
/// the j-th editable position). The wild type, when included, comes first.
pub fn enumerate_edit_sets(
    mask: &EditMask,
    include_wildtype: bool,
    cap: usize,
) -> Result<Vec<EditSet>, SeqError> {
    let positions = mask.protospacer_positions();
    let k = positions.len();
    if k > cap {
        return Err(SeqError::TooManyTargetBases { k, cap });
    }
    let first = if include_wildtype { 0u64 } else { 1 };
    Ok((first..(1u64 << k))
        .map(|counter| {
            let mut bits = 0u32;
            for (j, &p) in positions.iter().enumerate() {
                if counter & (1 << j) != 0 {
                    bits |= 1 << p;
                }
            }
            EditSet::from_bits(bits)
        })
        .collect())
}

pub fn enumerate_outcomes(
    reference: &ReferenceSequence,
    editor: EditorClass,
    window: EditWindow,
    include_wildtype: bool,
    cap: usize,
) -> Result<Vec<OutcomeSequence>, SeqError> {
    let mask = edit_mask(reference, editor, window);
    enumerate_edit_sets(&mask, include_wildtype, cap)?
        .into_iter()
        .map(|edits| OutcomeSequence::from_edits(reference, editor, edits))
        .collect()
}

/// 0-based flattened indices where `outcome` differs from `reference`.
pub fn diff_positions(
    reference: &ReferenceSequence,
    outcome: &OutcomeSequence,
) -> Result<Vec<usize>, SeqError> {
    let ref_bases = reference.bases();
    if ref_bases.len() != outcome.bases().len() {
        return Err(SeqError::LengthMismatch {
            expected: ref_bases.len(),
            found: outcome.bases().len(),
            position: ref_bases.len().min(outcome.bases().len()) + 1,
        });
    }
    Ok(ref_bases
        .iter()
        .zip(outcome.bases())
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(t, _)| t)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqcore::{parse_sequence, RepresentationMode};

    fn reference(text: &str) -> ReferenceSequence {
        parse_sequence(text, RepresentationMode::Protospacer).unwrap()
    }

    #[test]
    fn mask_without_source_base_is_empty() {
        let r = reference("CCGTCCGTCCGTCCGTCCGT");
        let m = edit_mask(&r, EditorClass::ABE, EditWindow::full());
        assert_eq!(m.count(), 0);
        assert!(m.flags().iter().all(|f| !f));
    }

    #[test]
    fn mask_marks_source_positions() {
        // A at 1-based positions 2 and 5.
        let r = reference("CACTACGTCCGTCCGTCCGT");
        let m = edit_mask(&r, EditorClass::ABE, EditWindow::full());
        let set: Vec<usize> = m
            .flags()
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(t, _)| t)
            .collect();
        assert_eq!(set, vec![1, 4]);
    }

    #[test]
    fn mask_respects_window() {
        // A at 1-based positions 1 and 12, window 3..=10.
        let r = reference("ACCTCCGTCCGACCGTCCGT");
        let w = EditWindow::new(3, 10).unwrap();
        let m = edit_mask(&r, EditorClass::ABE, w);
        // Brute-force scan: a position is flagged iff base is A and 3 <= pos <= 10.
        let expected: Vec<bool> = r
            .bases()
            .iter()
            .enumerate()
            .map(|(t, &b)| b == Nucleotide::A && (3..=10).contains(&(t + 1)))
            .collect();
        assert_eq!(m.flags(), expected.as_slice());
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn mask_offset_in_full_mode() {
        let r = parse_sequence(
            "AAAAACACTACGTCCGTCCGTCCGTAGGAAAAAA",
            RepresentationMode::Full,
        )
        .unwrap();
        let m = edit_mask(&r, EditorClass::ABE, EditWindow::full());
        // overhang and PAM As never flagged.
        assert_eq!(m.protospacer_positions(), vec![1, 4]);
        assert!(m.flags()[6] && m.flags()[9]);
        assert_eq!(m.count(), 2);
    }

    #[test]
    fn window_errors() {
        assert!(EditWindow::new(0, 5).is_err());
        assert!(EditWindow::new(3, 21).is_err());
        assert!(EditWindow::new(6, 5).is_err());
        assert_eq!(
            "3:10".parse::<EditWindow>().unwrap(),
            EditWindow::new(3, 10).unwrap()
        );
        assert!("3-10".parse::<EditWindow>().is_err());
    }

    #[test]
    fn enumeration_sizes() {
        let r = reference("CCGTCCGTCCGTCCGTCCGT");
        let all = enumerate_outcomes(&r, EditorClass::ABE, EditWindow::full(), true, 16).unwrap();
        assert_eq!(all.len(), 1);
        assert!(all[0].is_wild_type());

        let r = reference("CACTACGTCCGTCCGTCCGT");
        let all = enumerate_outcomes(&r, EditorClass::ABE, EditWindow::full(), true, 16).unwrap();
        let sets: Vec<Vec<usize>> = all
            .iter()
            .map(|o| o.edits().positions().collect())
            .collect();
        assert_eq!(sets, vec![vec![], vec![1], vec![4], vec![1, 4]]);
        let edited =
            enumerate_outcomes(&r, EditorClass::ABE, EditWindow::full(), false, 16).unwrap();
        assert_eq!(edited.len(), 3);
    }

    #[test]
    fn too_many_target_bases() {
        let r = reference("AAAAAAAAAAAAAAAAAAAA");
        let err =
            enumerate_outcomes(&r, EditorClass::ABE, EditWindow::full(), true, 16).unwrap_err();
        assert_eq!(err, SeqError::TooManyTargetBases { k: 20, cap: 16 });
        assert!(err.to_string().contains("20") && err.to_string().contains("16"));
    }

    #[test]
    fn a_to_g_at_position_five_is_enumerated() {
        let r = reference("CTGCAGTACCAAGTGATCCG");
        let all = enumerate_outcomes(&r, EditorClass::ABE, EditWindow::full(), true, 16).unwrap();
        let mut expected = r.bases();
        expected[4] = Nucleotide::G;
        assert!(all.iter().any(|o| o.bases() == expected.as_slice()));
    }

    #[test]
    fn diff_positions_cases() {
        let r = reference("CACTACGTCCGTCCGTCCGT");
        let wt = OutcomeSequence::wild_type(&r);
        assert!(diff_positions(&r, &wt).unwrap().is_empty());
        let one = OutcomeSequence::from_edits(&r, EditorClass::ABE, EditSet::from_positions([4]))
            .unwrap();
        assert_eq!(diff_positions(&r, &one).unwrap(), vec![4]);
        let two = OutcomeSequence::parse(&r, EditorClass::ABE, "CGCTGCGTCCGTCCGTCCGT").unwrap();
        // character-by-character comparison
        let manual: Vec<usize> = "CACTACGTCCGTCCGTCCGT"
            .chars()
            .zip("CGCTGCGTCCGTCCGTCCGT".chars())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(diff_positions(&r, &two).unwrap(), manual);
        assert_eq!(two.edits(), EditSet::from_positions([1, 4]));
    }

    #[test]
    fn illegal_outcomes_rejected() {
        let r = reference("CACTACGTCCGTCCGTCCGT");
        // C -> T is not an ABE edit
        assert!(matches!(
            OutcomeSequence::parse(&r, EditorClass::ABE, "TACTACGTCCGTCCGTCCGT"),
            Err(SeqError::IllegalOutcome { position: 1, .. })
        ));
        assert!(
            OutcomeSequence::from_edits(&r, EditorClass::ABE, EditSet::from_positions([0]))
                .is_err()
        );
        let full = parse_sequence(
            "AAAAACACTACGTCCGTCCGTCCGTAGGAAAAAA",
            RepresentationMode::Full,
        )
        .unwrap();
        // edit inside the left overhang
        assert!(matches!(
            OutcomeSequence::parse(
                &full,
                EditorClass::ABE,
                "GAAAACACTACGTCCGTCCGTCCGTAGGAAAAAA"
            ),
            Err(SeqError::IllegalOutcome { position: 1, .. })
        ));
    }

    #[test]
    fn edit_set_display() {
        assert_eq!(EditSet::EMPTY.to_display_list(), "-");
        assert_eq!(EditSet::from_positions([1, 4]).to_display_list(), "2,5");
    }
}

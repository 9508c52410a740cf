use std::fmt;
use std::str::FromStr;

use super::nucleotide::{bases_to_string, parse_bases, Nucleotide};
use super::SeqError;

pub const PROTOSPACER_LEN: usize = 20;
pub const PAM_LEN: usize = 4;
pub const OVERHANG_LEN: usize = 5;
/// Longest flattened reference (overhang + protospacer + PAM + overhang).
pub const MAX_SEQ_LEN: usize = OVERHANG_LEN + PROTOSPACER_LEN + PAM_LEN + OVERHANG_LEN;

/// Which parts of the target locus are fed to the models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum RepresentationMode {
    Protospacer,
    #[default]
    ProtospacerPam,
    Full,
}

impl RepresentationMode {
    pub const ALL: [RepresentationMode; 3] = [
        RepresentationMode::Protospacer,
        RepresentationMode::ProtospacerPam,
        RepresentationMode::Full,
    ];

    /// Flattened length T.
    pub fn seq_len(self) -> usize {
        match self {
            RepresentationMode::Protospacer => PROTOSPACER_LEN,
            RepresentationMode::ProtospacerPam => PROTOSPACER_LEN + PAM_LEN,
            RepresentationMode::Full => MAX_SEQ_LEN,
        }
    }

    /// Offset of protospacer position 0 within the flattened sequence.
    pub fn protospacer_offset(self) -> usize {
        match self {
            RepresentationMode::Full => OVERHANG_LEN,
            _ => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RepresentationMode::Protospacer => "protospacer",
            RepresentationMode::ProtospacerPam => "protospacer_pam",
            RepresentationMode::Full => "full",
        }
    }
}

impl fmt::Display for RepresentationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RepresentationMode {
    type Err = SeqError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "protospacer" => Ok(RepresentationMode::Protospacer),
            "protospacer_pam" | "protospacer+pam" => Ok(RepresentationMode::ProtospacerPam),
            "full" => Ok(RepresentationMode::Full),
            other => Err(SeqError::UnknownMode(other.to_string())),
        }
    }
}

/// A target locus. Parts that are not needed by `mode` may still be carried
/// so a record can be re-projected to a richer or poorer representation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ReferenceSequence {
    left_overhang: Vec<Nucleotide>,
    protospacer: Vec<Nucleotide>,
    pam: Vec<Nucleotide>,
    right_overhang: Vec<Nucleotide>,
    mode: RepresentationMode,
}

impl ReferenceSequence {
    pub fn new(
        left_overhang: Vec<Nucleotide>,
        protospacer: Vec<Nucleotide>,
        pam: Vec<Nucleotide>,
        right_overhang: Vec<Nucleotide>,
        mode: RepresentationMode,
    ) -> Result<Self, SeqError> {
        check_len("protospacer", protospacer.len(), &[PROTOSPACER_LEN])?;
        check_len("pam", pam.len(), &[0, PAM_LEN])?;
        check_len("left_overhang", left_overhang.len(), &[0, OVERHANG_LEN])?;
        check_len("right_overhang", right_overhang.len(), &[0, OVERHANG_LEN])?;
        let reference = ReferenceSequence {
            left_overhang,
            protospacer,
            pam,
            right_overhang,
            mode,
        };
        reference.check_mode(mode)?;
        Ok(reference)
    }

    /// Build from text parts as they appear in a library file (empty strings allowed).
    pub fn from_parts(
        left: &str,
        protospacer: &str,
        pam: &str,
        right: &str,
        mode: RepresentationMode,
    ) -> Result<Self, SeqError> {
        Self::new(
            parse_bases(left)?,
            parse_bases(protospacer)?,
            parse_bases(pam)?,
            parse_bases(right)?,
            mode,
        )
    }

    fn check_mode(&self, mode: RepresentationMode) -> Result<(), SeqError> {
        let missing = match mode {
            RepresentationMode::Protospacer => None,
            RepresentationMode::ProtospacerPam => self.pam.is_empty().then_some("pam"),
            RepresentationMode::Full => {
                if self.pam.is_empty() {
                    Some("pam")
                } else if self.left_overhang.is_empty() || self.right_overhang.is_empty() {
                    Some("overhangs")
                } else {
                    None
                }
            }
        };
        match missing {
            Some(part) => Err(SeqError::MissingPart { part, mode }),
            None => Ok(()),
        }
    }

    /// Re-project to another representation mode.
    pub fn with_mode(&self, mode: RepresentationMode) -> Result<Self, SeqError> {
        self.check_mode(mode)?;
        let mut out = self.clone();
        out.mode = mode;
        Ok(out)
    }

    pub fn mode(&self) -> RepresentationMode {
        self.mode
    }

    pub fn seq_len(&self) -> usize {
        self.mode.seq_len()
    }

    pub fn protospacer(&self) -> &[Nucleotide] {
        &self.protospacer
    }

    pub fn pam(&self) -> &[Nucleotide] {
        &self.pam
    }

    pub fn left_overhang(&self) -> &[Nucleotide] {
        &self.left_overhang
    }

    pub fn right_overhang(&self) -> &[Nucleotide] {
        &self.right_overhang
    }

    /// Flattened bases in the order left overhang, protospacer, PAM, right overhang,
    /// restricted to the parts selected by the mode.
    pub fn bases(&self) -> Vec<Nucleotide> {
        let mut out = Vec::with_capacity(self.seq_len());
        if self.mode == RepresentationMode::Full {
            out.extend_from_slice(&self.left_overhang);
        }
        out.extend_from_slice(&self.protospacer);
        if self.mode != RepresentationMode::Protospacer {
            out.extend_from_slice(&self.pam);
        }
        if self.mode == RepresentationMode::Full {
            out.extend_from_slice(&self.right_overhang);
        }
        out
    }

    /// Every part carried by the record, regardless of mode.
    pub fn all_bases(&self) -> Vec<Nucleotide> {
        let mut out = self.left_overhang.clone();
        out.extend_from_slice(&self.protospacer);
        out.extend_from_slice(&self.pam);
        out.extend_from_slice(&self.right_overhang);
        out
    }

    /// Offset of the protospacer within `all_bases`.
    pub fn all_bases_offset(&self) -> usize {
        self.left_overhang.len()
    }

    pub fn to_text(&self) -> String {
        bases_to_string(&self.bases())
    }
}

impl fmt::Display for ReferenceSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn check_len(part: &'static str, found: usize, allowed: &[usize]) -> Result<(), SeqError> {
    if allowed.contains(&found) {
        Ok(())
    } else {
        Err(SeqError::PartLength {
            part,
            found,
            allowed: allowed.to_vec(),
        })
    }
}

/// Parse a flattened ACGT string laid out as the given mode dictates.
pub fn parse_sequence(text: &str, mode: RepresentationMode) -> Result<ReferenceSequence, SeqError> {
    let bases = parse_bases(text.trim())?;
    let expected = mode.seq_len();
    if bases.len() != expected {
        return Err(SeqError::LengthMismatch {
            expected,
            found: bases.len(),
            position: bases.len().min(expected) + 1,
        });
    }
    let (left, rest) = match mode {
        RepresentationMode::Full => bases.split_at(OVERHANG_LEN),
        _ => bases.split_at(0),
    };
    let (protospacer, rest) = rest.split_at(PROTOSPACER_LEN);
    let (pam, right) = match mode {
        RepresentationMode::Protospacer => rest.split_at(0),
        _ => rest.split_at(PAM_LEN),
    };
    ReferenceSequence::new(
        left.to_vec(),
        protospacer.to_vec(),
        pam.to_vec(),
        right.to_vec(),
        mode,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROTO: &str = "GACTAGCTAGCATCGATCGA";

    #[test]
    fn protospacer_pam_has_t24() {
        let text = format!("{PROTO}AGGT");
        let r = parse_sequence(&text, RepresentationMode::ProtospacerPam).unwrap();
        assert_eq!(r.seq_len(), 24);
        assert_eq!(r.to_text(), text);
        assert_eq!(r.pam().len(), 4);
    }

    #[test]
    fn invalid_character_reports_index() {
        let mut text = PROTO.to_string();
        text.replace_range(7..8, "N");
        let err = parse_sequence(&text, RepresentationMode::Protospacer).unwrap_err();
        assert_eq!(
            err,
            SeqError::InvalidCharacter {
                position: 8,
                found: 'N'
            }
        );
    }

    #[test]
    fn full_mode_populates_overhangs() {
        let text = format!("CCCCC{PROTO}TGGAAAAAT");
        let r = parse_sequence(&text, RepresentationMode::Full).unwrap();
        assert_eq!(r.seq_len(), 34);
        assert_eq!(bases_to_string(r.left_overhang()), "CCCCC");
        assert_eq!(bases_to_string(r.right_overhang()), "AAAAT");
        assert_eq!(bases_to_string(r.pam()), "TGGA");
        assert_eq!(r.to_text(), text);
    }

    #[test]
    fn length_mismatch() {
        let err = parse_sequence(PROTO, RepresentationMode::ProtospacerPam).unwrap_err();
        assert!(matches!(
            err,
            SeqError::LengthMismatch {
                expected: 24,
                found: 20,
                ..
            }
        ));
    }

    #[test]
    fn projection_between_modes() {
        let text = format!("CCCCC{PROTO}TGGAAAAAT");
        let full = parse_sequence(&text, RepresentationMode::Full).unwrap();
        let pp = full.with_mode(RepresentationMode::ProtospacerPam).unwrap();
        assert_eq!(pp.to_text(), format!("{PROTO}TGGA"));
        let p = parse_sequence(PROTO, RepresentationMode::Protospacer).unwrap();
        assert!(p.with_mode(RepresentationMode::Full).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in RepresentationMode::ALL {
            assert_eq!(m.name().parse::<RepresentationMode>().unwrap(), m);
        }
    }
}

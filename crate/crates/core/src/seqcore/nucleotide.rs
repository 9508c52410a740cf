use std::fmt;

use super::SeqError;

/// One of the four DNA bases. Column order for one-hot encoding is A, C, G, T.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Nucleotide {
    A,
    C,
    G,
    T,
}

impl Nucleotide {
    pub const ALL: [Nucleotide; 4] = [Nucleotide::A, Nucleotide::C, Nucleotide::G, Nucleotide::T];

    /// Column index in the one-hot layout.
    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'A' | 'a' => Some(Nucleotide::A),
            'C' | 'c' => Some(Nucleotide::C),
            'G' | 'g' => Some(Nucleotide::G),
            'T' | 't' => Some(Nucleotide::T),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Nucleotide::A => 'A',
            Nucleotide::C => 'C',
            Nucleotide::G => 'G',
            Nucleotide::T => 'T',
        }
    }
}

impl fmt::Display for Nucleotide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Parse a strict ACGT string. Lowercase is accepted and upper-cased.
pub fn parse_bases(text: &str) -> Result<Vec<Nucleotide>, SeqError> {
    text.chars()
        .enumerate()
        .map(|(i, c)| {
            Nucleotide::from_char(c).ok_or(SeqError::InvalidCharacter {
                position: i + 1,
                found: c,
            })
        })
        .collect()
}

pub fn bases_to_string(bases: &[Nucleotide]) -> String {
    bases.iter().map(|b| b.as_char()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EditorKind {
    /// Adenine base editor, A to G.
    Abe,
    /// Cytosine base editor, C to T.
    Cbe,
}

/// Substitution rule of a base editor. The source/target pair is fixed by the kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EditorClass {
    kind: EditorKind,
}

impl EditorClass {
    pub const ABE: EditorClass = EditorClass {
        kind: EditorKind::Abe,
    };
    pub const CBE: EditorClass = EditorClass {
        kind: EditorKind::Cbe,
    };

    pub fn new(kind: EditorKind) -> Self {
        EditorClass { kind }
    }

    pub fn kind(self) -> EditorKind {
        self.kind
    }

    pub fn source_base(self) -> Nucleotide {
        match self.kind {
            EditorKind::Abe => Nucleotide::A,
            EditorKind::Cbe => Nucleotide::C,
        }
    }

    pub fn target_base(self) -> Nucleotide {
        match self.kind {
            EditorKind::Abe => Nucleotide::G,
            EditorKind::Cbe => Nucleotide::T,
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.to_ascii_uppercase().as_str() {
            "ABE" => Some(Self::ABE),
            "CBE" => Some(Self::CBE),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self.kind {
            EditorKind::Abe => "ABE",
            EditorKind::Cbe => "CBE",
        }
    }
}

impl Default for EditorClass {
    fn default() -> Self {
        Self::ABE
    }
}

impl fmt::Display for EditorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

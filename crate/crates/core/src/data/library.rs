use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::DataError;
use crate::seqcore::{
    parse_bases, EditSet, EditorClass, OutcomeSequence, ReferenceSequence, RepresentationMode,
    PROTOSPACER_LEN,
};

pub const LIBRARY_COLUMNS: [&str; 7] = [
    "editor_id",
    "reference_id",
    "left_overhang",
    "protospacer",
    "pam",
    "right_overhang",
    "outcome_sequence",
];

/// Proportions read from a file may miss 1 by at most this much before renormalisation.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-3;

/// How to interpret a library file: the representation to build and each editor's chemistry.
#[derive(Clone, Debug, PartialEq)]
pub struct LibrarySchema {
    pub mode: RepresentationMode,
    pub editor_classes: HashMap<String, EditorClass>,
    pub default_class: EditorClass,
}

impl LibrarySchema {
    pub fn new(mode: RepresentationMode) -> Self {
        LibrarySchema {
            mode,
            editor_classes: HashMap::new(),
            default_class: EditorClass::ABE,
        }
    }

    pub fn with_editor(mut self, id: &str, class: EditorClass) -> Self {
        self.editor_classes.insert(id.to_string(), class);
        self
    }

    pub fn class_of(&self, editor: &str) -> EditorClass {
        self.editor_classes
            .get(editor)
            .copied()
            .unwrap_or(self.default_class)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeRecord {
    pub outcome: OutcomeSequence,
    pub read_count: Option<u64>,
    pub proportion: f64,
}

impl OutcomeRecord {
    pub fn edits(&self) -> EditSet {
        self.outcome.edits()
    }

    pub fn is_wild_type(&self) -> bool {
        self.outcome.is_wild_type()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceRecord {
    pub id: String,
    pub reference: ReferenceSequence,
    pub outcomes: Vec<OutcomeRecord>,
}

impl ReferenceRecord {
    pub fn wild_type(&self) -> Option<&OutcomeRecord> {
        self.outcomes.iter().find(|o| o.is_wild_type())
    }

    pub fn total_reads(&self) -> Option<u64> {
        self.outcomes.iter().map(|o| o.read_count).sum()
    }
}

/// One editor's screen: references with their observed outcome distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct LibraryDataset {
    pub editor_id: String,
    pub editor: EditorClass,
    pub mode: RepresentationMode,
    pub references: Vec<ReferenceRecord>,
}

/// Summary in the layout of a screen statistics table.
#[derive(Clone, Debug, PartialEq)]
pub struct LibraryStats {
    pub instances: usize,
    pub references: usize,
    pub mean_outcomes: f64,
    pub mean_probability: f64,
    pub std_probability: f64,
    pub mean_wild_type: f64,
}

impl LibraryDataset {
    pub fn new(
        editor_id: impl Into<String>,
        editor: EditorClass,
        mode: RepresentationMode,
    ) -> Self {
        LibraryDataset {
            editor_id: editor_id.into(),
            editor,
            mode,
            references: Vec::new(),
        }
    }

    pub fn instances(&self) -> usize {
        self.references.iter().map(|r| r.outcomes.len()).sum()
    }

    pub fn stats(&self) -> LibraryStats {
        let probs: Vec<f64> = self
            .references
            .iter()
            .flat_map(|r| r.outcomes.iter().map(|o| o.proportion))
            .collect();
        let n = probs.len().max(1) as f64;
        let mean = probs.iter().sum::<f64>() / n;
        let var = probs.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        let refs = self.references.len().max(1) as f64;
        LibraryStats {
            instances: probs.len(),
            references: self.references.len(),
            mean_outcomes: probs.len() as f64 / refs,
            mean_probability: mean,
            std_probability: var.sqrt(),
            mean_wild_type: self
                .references
                .iter()
                .map(|r| r.wild_type().map_or(0.0, |o| o.proportion))
                .sum::<f64>()
                / refs,
        }
    }

    /// Subset by reference index, preserving the given order.
    pub fn select(&self, indices: &[usize]) -> LibraryDataset {
        LibraryDataset {
            references: indices
                .iter()
                .map(|&i| self.references[i].clone())
                .collect(),
            ..LibraryDataset::new(self.editor_id.clone(), self.editor, self.mode)
        }
    }

    /// Re-project every reference to another representation.
    pub fn with_mode(&self, mode: RepresentationMode) -> Result<LibraryDataset, DataError> {
        let mut out = LibraryDataset::new(self.editor_id.clone(), self.editor, mode);
        for r in &self.references {
            let reference = r.reference.with_mode(mode)?;
            let outcomes = r
                .outcomes
                .iter()
                .map(|o| {
                    Ok(OutcomeRecord {
                        outcome: OutcomeSequence::from_edits(&reference, self.editor, o.edits())?,
                        ..o.clone()
                    })
                })
                .collect::<Result<_, DataError>>()?;
            out.references.push(ReferenceRecord {
                id: r.id.clone(),
                reference,
                outcomes,
            });
        }
        Ok(out)
    }
}

/// Edit set of a flattened outcome string laid out like `reference.all_bases()`.
pub fn edits_from_full_outcome(
    reference: &ReferenceSequence,
    editor: EditorClass,
    text: &str,
) -> Result<EditSet, String> {
    let bases = parse_bases(text).map_err(|e| e.to_string())?;
    let full = reference.all_bases();
    if bases.len() != full.len() {
        return Err(format!(
            "outcome has {} bases, the row's sequence parts have {}",
            bases.len(),
            full.len()
        ));
    }
    let offset = reference.all_bases_offset();
    let mut positions = Vec::new();
    for (t, (&r, &o)) in full.iter().zip(&bases).enumerate() {
        if r == o {
            continue;
        }
        if t < offset || t >= offset + PROTOSPACER_LEN {
            return Err(format!(
                "edit outside the protospacer at position {}",
                t + 1
            ));
        }
        if r != editor.source_base() || o != editor.target_base() {
            return Err(format!(
                "{r}>{o} at position {} is not a {} substitution",
                t + 1,
                editor.name()
            ));
        }
        positions.push(t - offset);
    }
    Ok(EditSet::from_positions(positions))
}

/// Outcome string over every part the reference carries.
pub fn full_outcome_text(
    reference: &ReferenceSequence,
    editor: EditorClass,
    edits: EditSet,
) -> String {
    let mut bases = reference.all_bases();
    let offset = reference.all_bases_offset();
    for p in edits.positions() {
        bases[offset + p] = editor.target_base();
    }
    crate::seqcore::bases_to_string(&bases)
}

enum Quantity {
    Count(u64),
    Proportion(f64),
}

pub fn read_library(
    reader: impl Read,
    schema: &LibrarySchema,
) -> Result<Vec<LibraryDataset>, DataError> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines.next().transpose()?.ok_or_else(|| DataError::Schema {
        row: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    let counts = match cols.as_slice() {
        [first @ .., "read_count"] if first == LIBRARY_COLUMNS => true,
        [first @ .., "proportion"] if first == LIBRARY_COLUMNS => false,
        _ => {
            return Err(DataError::Schema {
                row: 1,
                message: format!(
                    "header must be {} followed by read_count or proportion",
                    LIBRARY_COLUMNS.join(" ")
                ),
            })
        }
    };

    let mut datasets: Vec<LibraryDataset> = Vec::new();
    let mut by_editor: HashMap<String, usize> = HashMap::new();
    let mut by_ref: HashMap<(usize, String), usize> = HashMap::new();
    let mut raw: Vec<Vec<Vec<Quantity>>> = Vec::new();

    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(DataError::Schema {
                row,
                message: format!("expected 8 fields, found {}", f.len()),
            });
        }
        let editor_id = f[0];
        let class = schema.class_of(editor_id);
        let ei = *by_editor.entry(editor_id.to_string()).or_insert_with(|| {
            datasets.push(LibraryDataset::new(editor_id, class, schema.mode));
            raw.push(Vec::new());
            datasets.len() - 1
        });
        let reference = ReferenceSequence::from_parts(f[2], f[3], f[4], f[5], schema.mode)
            .map_err(|e| DataError::Schema {
                row,
                message: e.to_string(),
            })?;
        let ds = &mut datasets[ei];
        let ri = match by_ref.get(&(ei, f[1].to_string())) {
            Some(&ri) => {
                if ds.references[ri].reference != reference {
                    return Err(DataError::Schema {
                        row,
                        message: format!(
                            "reference {} appears with different sequence parts",
                            f[1]
                        ),
                    });
                }
                ri
            }
            None => {
                ds.references.push(ReferenceRecord {
                    id: f[1].to_string(),
                    reference: reference.clone(),
                    outcomes: Vec::new(),
                });
                raw[ei].push(Vec::new());
                by_ref.insert((ei, f[1].to_string()), ds.references.len() - 1);
                ds.references.len() - 1
            }
        };
        let edits = edits_from_full_outcome(&reference, class, f[6])
            .map_err(|message| DataError::IllegalOutcomeRow { row, message })?;
        let record = &mut ds.references[ri];
        if record.outcomes.iter().any(|o| o.edits() == edits) {
            return Err(DataError::Schema {
                row,
                message: format!("duplicate outcome for reference {}", record.id),
            });
        }
        let quantity = if counts {
            Quantity::Count(f[7].parse().map_err(|_| DataError::Schema {
                row,
                message: format!("read_count {:?} is not a nonnegative integer", f[7]),
            })?)
        } else {
            let p: f64 = f[7].parse().map_err(|_| DataError::Schema {
                row,
                message: format!("proportion {:?} is not a number", f[7]),
            })?;
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Schema {
                    row,
                    message: format!("proportion {p} outside [0, 1]"),
                });
            }
            Quantity::Proportion(p)
        };
        record.outcomes.push(OutcomeRecord {
            outcome: OutcomeSequence::from_edits(&reference, class, edits)?,
            read_count: None,
            proportion: 0.0,
        });
        raw[ei][ri].push(quantity);
    }

    for (ds, quantities) in datasets.iter_mut().zip(raw) {
        for (r, q) in ds.references.iter_mut().zip(quantities) {
            let total: f64 = q
                .iter()
                .map(|q| match q {
                    Quantity::Count(c) => *c as f64,
                    Quantity::Proportion(p) => *p,
                })
                .sum();
            let bad = if counts {
                total <= 0.0
            } else {
                (total - 1.0).abs() > NORMALIZATION_TOLERANCE
            };
            if bad {
                return Err(DataError::Normalization {
                    editor: ds.editor_id.clone(),
                    reference: r.id.clone(),
                    sum: total,
                });
            }
            for (o, q) in r.outcomes.iter_mut().zip(q) {
                match q {
                    Quantity::Count(c) => {
                        o.read_count = Some(c);
                        o.proportion = c as f64 / total;
                    }
                    Quantity::Proportion(p) => o.proportion = p / total,
                }
            }
        }
    }
    Ok(datasets)
}

pub fn load_library(
    path: impl AsRef<Path>,
    schema: &LibrarySchema,
) -> Result<Vec<LibraryDataset>, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_library(file, schema)
}

/// TSV text for the datasets. Read counts are written when every outcome has one,
/// proportions otherwise.
pub fn library_to_string(datasets: &[LibraryDataset]) -> String {
    let counts = datasets
        .iter()
        .flat_map(|d| &d.references)
        .flat_map(|r| &r.outcomes)
        .all(|o| o.read_count.is_some());
    let mut out = LIBRARY_COLUMNS.join("\t");
    out.push_str(if counts {
        "\tread_count\n"
    } else {
        "\tproportion\n"
    });
    for ds in datasets {
        for r in &ds.references {
            let refseq = &r.reference;
            let parts = [
                refseq.left_overhang(),
                refseq.protospacer(),
                refseq.pam(),
                refseq.right_overhang(),
            ]
            .map(crate::seqcore::bases_to_string);
            for o in &r.outcomes {
                let _ = write!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t",
                    ds.editor_id,
                    r.id,
                    parts[0],
                    parts[1],
                    parts[2],
                    parts[3],
                    full_outcome_text(refseq, ds.editor, o.edits())
                );
                match o.read_count {
                    Some(c) if counts => {
                        let _ = writeln!(out, "{c}");
                    }
                    _ => {
                        let _ = writeln!(out, "{}", o.proportion);
                    }
                }
            }
        }
    }
    out
}

pub fn write_library(path: impl AsRef<Path>, datasets: &[LibraryDataset]) -> Result<(), DataError> {
    let path = path.as_ref();
    let io = |e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(library_to_string(datasets).as_bytes())
        .map_err(io)
}

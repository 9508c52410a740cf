use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use super::library::full_outcome_text;
use super::{DataError, LibraryDataset, OutcomeRecord, ReferenceRecord};
use crate::numcore::derived;
use crate::seqcore::{
    edit_mask, enumerate_edit_sets, EditSet, EditWindow, EditorClass, Nucleotide, OutcomeSequence,
    ReferenceSequence, RepresentationMode, DEFAULT_ENUMERATION_CAP, OVERHANG_LEN, PAM_LEN,
    PROTOSPACER_LEN,
};

pub const MIN_READS_PER_REFERENCE: u64 = 100;

/// Truth rows below this oracle probability are not written.
pub const TRUTH_FLOOR: f64 = 1e-7;

/// Ground-truth editing process for one synthetic editor.
///
/// A read first engages the editor with probability `activity * pam_multiplier`;
/// an engaged read then edits each source base independently with probability
/// `sigmoid(peak_logit - ((pos - peak) / width)^2 + context[previous base])`.
/// With `activity = 1` and unit multipliers the process is fully independent.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleEditorProfile {
    pub editor_id: String,
    pub editor: EditorClass,
    pub activity: f64,
    /// 1-based protospacer position of the strongest editing.
    pub peak: f64,
    pub width: f64,
    pub peak_logit: f64,
    /// Logit shift indexed by the base 5' of the edited position.
    pub context: [f64; 4],
    /// Engagement multiplier indexed by PAM bases 2 and 3 (`4 * b2 + b3`).
    pub pam_multipliers: [f64; 16],
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl OracleEditorProfile {
    /// Fully independent profile: every read is engaged.
    pub fn independent(
        editor_id: &str,
        editor: EditorClass,
        peak: f64,
        width: f64,
        peak_logit: f64,
    ) -> Self {
        OracleEditorProfile {
            editor_id: editor_id.to_string(),
            editor,
            activity: 1.0,
            peak,
            width,
            peak_logit,
            context: [0.0; 4],
            pam_multipliers: [1.0; 16],
        }
    }

    /// A plausible randomised profile; `index` spreads peaks across editors.
    pub fn random(editor_id: &str, editor: EditorClass, index: usize, rng: &mut impl Rng) -> Self {
        let mut pam_multipliers = [0.0; 16];
        for m in &mut pam_multipliers {
            *m = rng.gen_range(0.25..1.0);
        }
        let mut context = [0.0; 4];
        for c in &mut context {
            *c = rng.gen_range(-1.0..1.0);
        }
        OracleEditorProfile {
            editor_id: editor_id.to_string(),
            editor,
            activity: rng.gen_range(0.55..0.85),
            peak: 5.0 + 0.75 * (index % 4) as f64 + rng.gen_range(-0.25..0.25),
            width: rng.gen_range(1.4..2.2),
            peak_logit: rng.gen_range(-0.5..0.8),
            context,
            pam_multipliers,
        }
    }

    /// Probability that a read of this reference engages the editor.
    pub fn engagement(&self, reference: &ReferenceSequence) -> f64 {
        let pam = reference.pam();
        let m = if pam.len() == PAM_LEN {
            self.pam_multipliers[4 * pam[1].index() + pam[2].index()]
        } else {
            1.0
        };
        (self.activity * m).clamp(0.0, 1.0)
    }

    /// `(protospacer position, edit probability given engagement)` for each source base.
    pub fn position_probs(&self, reference: &ReferenceSequence) -> Vec<(usize, f64)> {
        let proto = reference.protospacer();
        proto
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == self.editor.source_base())
            .map(|(p, _)| {
                let prev = if p == 0 {
                    reference
                        .left_overhang()
                        .last()
                        .copied()
                        .unwrap_or(Nucleotide::A)
                } else {
                    proto[p - 1]
                };
                let z = (p as f64 + 1.0 - self.peak) / self.width;
                (
                    p,
                    sigmoid(self.peak_logit - z * z + self.context[prev.index()]),
                )
            })
            .collect()
    }

    /// Exact probability of observing `edits` (wild type included).
    pub fn outcome_probability(&self, reference: &ReferenceSequence, edits: EditSet) -> f64 {
        let g = self.engagement(reference);
        let mut product = 1.0;
        for (p, q) in self.position_probs(reference) {
            product *= if edits.contains(p) { q } else { 1.0 - q };
        }
        let engaged = g * product;
        if edits.is_empty() {
            (1.0 - g) + engaged
        } else {
            engaged
        }
    }

    /// Draw one read's edit set.
    pub fn sample_read(&self, g: f64, probs: &[(usize, f64)], rng: &mut impl Rng) -> EditSet {
        if rng.gen::<f64>() >= g {
            return EditSet::EMPTY;
        }
        let mut bits = 0u32;
        for &(p, q) in probs {
            if rng.gen::<f64>() < q {
                bits |= 1 << p;
            }
        }
        EditSet::from_bits(bits)
    }
}

/// Exact oracle probability of one outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthRow {
    pub editor_id: String,
    pub reference_id: String,
    pub outcome_sequence: String,
    pub probability: f64,
}

pub const TRUTH_COLUMNS: [&str; 4] = [
    "editor_id",
    "reference_id",
    "outcome_sequence",
    "oracle_probability",
];

#[derive(Clone, Debug)]
pub struct SyntheticScreen {
    pub profiles: Vec<OracleEditorProfile>,
    pub datasets: Vec<LibraryDataset>,
    pub truth: Vec<TruthRow>,
}

fn random_bases(n: usize, rng: &mut impl Rng) -> Vec<Nucleotide> {
    (0..n)
        .map(|_| Nucleotide::ALL[rng.gen_range(0..4)])
        .collect()
}

/// Random references carrying every part; at most `DEFAULT_ENUMERATION_CAP`
/// source bases for `editor` in the protospacer.
pub fn random_references(
    n: usize,
    editor: EditorClass,
    mode: RepresentationMode,
    rng: &mut impl Rng,
) -> Vec<ReferenceSequence> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let proto = random_bases(PROTOSPACER_LEN, rng);
        let k = proto.iter().filter(|&&b| b == editor.source_base()).count();
        let left = random_bases(OVERHANG_LEN, rng);
        let pam = random_bases(PAM_LEN, rng);
        let right = random_bases(OVERHANG_LEN, rng);
        if k > DEFAULT_ENUMERATION_CAP {
            continue;
        }
        out.push(
            ReferenceSequence::new(left, proto, pam, right, mode)
                .expect("parts have valid lengths"),
        );
    }
    out
}

/// Simulate `reads_per_ref` reads for each of `n_refs` random references per editor.
/// Every editor screens the same reference set, like a shared library.
pub fn generate_synthetic_screen(
    profiles: &[OracleEditorProfile],
    n_refs: usize,
    reads_per_ref: u64,
    mode: RepresentationMode,
    seed: u64,
) -> Result<SyntheticScreen, DataError> {
    if reads_per_ref < MIN_READS_PER_REFERENCE {
        return Err(DataError::InvalidArgument(format!(
            "reads per reference must be at least {MIN_READS_PER_REFERENCE}, got {reads_per_ref}"
        )));
    }
    if n_refs == 0 {
        return Err(DataError::InvalidArgument(
            "need at least one reference".into(),
        ));
    }
    let class = profiles.first().map_or(EditorClass::ABE, |p| p.editor);
    let references = random_references(n_refs, class, mode, &mut derived(seed, "references"));
    let width = n_refs.to_string().len();
    let ids: Vec<String> = (0..n_refs)
        .map(|i| format!("ref{:0width$}", i + 1))
        .collect();

    let mut datasets = Vec::with_capacity(profiles.len());
    let mut truth = Vec::new();
    for profile in profiles {
        let mut rng = derived(seed, &format!("reads/{}", profile.editor_id));
        let mut ds = LibraryDataset::new(profile.editor_id.clone(), profile.editor, mode);
        for (reference, id) in references.iter().zip(&ids) {
            let g = profile.engagement(reference);
            let probs = profile.position_probs(reference);
            let k = probs.len();
            let mut counts = vec![0u64; 1 << k];
            for _ in 0..reads_per_ref {
                let e = profile.sample_read(g, &probs, &mut rng);
                let mut idx = 0;
                for (j, &(p, _)) in probs.iter().enumerate() {
                    if e.contains(p) {
                        idx |= 1 << j;
                    }
                }
                counts[idx] += 1;
            }
            // enumeration order matches the counter used above
            let mask = edit_mask(reference, profile.editor, EditWindow::full());
            let sets = enumerate_edit_sets(&mask, true, DEFAULT_ENUMERATION_CAP)?;
            let mut outcomes = Vec::new();
            for (edits, &c) in sets.iter().zip(&counts) {
                let p = profile.outcome_probability(reference, *edits);
                if p >= TRUTH_FLOOR || c > 0 {
                    truth.push(TruthRow {
                        editor_id: profile.editor_id.clone(),
                        reference_id: id.clone(),
                        outcome_sequence: full_outcome_text(reference, profile.editor, *edits),
                        probability: p,
                    });
                }
                if c > 0 {
                    outcomes.push(OutcomeRecord {
                        outcome: OutcomeSequence::from_edits(reference, profile.editor, *edits)?,
                        read_count: Some(c),
                        proportion: c as f64 / reads_per_ref as f64,
                    });
                }
            }
            ds.references.push(ReferenceRecord {
                id: id.clone(),
                reference: reference.clone(),
                outcomes,
            });
        }
        datasets.push(ds);
    }
    Ok(SyntheticScreen {
        profiles: profiles.to_vec(),
        datasets,
        truth,
    })
}

/// Default profiles for `n` synthetic editors named `E1..En`.
pub fn default_profiles(n: usize, seed: u64) -> Vec<OracleEditorProfile> {
    let mut rng = derived(seed, "profiles");
    (0..n)
        .map(|i| OracleEditorProfile::random(&format!("E{}", i + 1), EditorClass::ABE, i, &mut rng))
        .collect()
}

pub fn truth_to_string(rows: &[TruthRow]) -> String {
    let mut out = TRUTH_COLUMNS.join("\t");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.editor_id, r.reference_id, r.outcome_sequence, r.probability
        );
    }
    out
}

pub fn write_truth(path: impl AsRef<Path>, rows: &[TruthRow]) -> Result<(), DataError> {
    let path = path.as_ref();
    std::fs::write(path, truth_to_string(rows)).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_truth(text: &str) -> Result<Vec<TruthRow>, DataError> {
    let mut lines = text.lines();
    if lines.next().map(|h| h.trim_end_matches('\r')) != Some(TRUTH_COLUMNS.join("\t").as_str()) {
        return Err(DataError::Schema {
            row: 1,
            message: format!("truth header must be {}", TRUTH_COLUMNS.join(" ")),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |message: String| DataError::Schema {
            row: i + 2,
            message,
        };
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", f.len())));
        }
        rows.push(TruthRow {
            editor_id: f[0].to_string(),
            reference_id: f[1].to_string(),
            outcome_sequence: f[2].to_string(),
            probability: f[3]
                .parse()
                .map_err(|_| bad(format!("bad probability {:?}", f[3])))?,
        });
    }
    Ok(rows)
}

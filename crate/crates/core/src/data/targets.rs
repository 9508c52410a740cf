use log::warn;

use super::LibraryDataset;
use crate::seqcore::EditSet;

/// Probability that a reference was edited at all.
#[derive(Clone, Debug, PartialEq)]
pub struct EfficiencyTarget {
    pub reference_id: String,
    pub p_edited: f64,
}

/// Distribution over edited outcomes given that editing happened.
#[derive(Clone, Debug, PartialEq)]
pub struct ProportionTarget {
    pub reference_id: String,
    pub outcomes: Vec<EditSet>,
    pub probabilities: Vec<f64>,
}

/// `1 - P(wild type)` per reference. References without a wild-type row are
/// treated as fully edited.
pub fn derive_efficiency_targets(ds: &LibraryDataset) -> Vec<EfficiencyTarget> {
    ds.references
        .iter()
        .map(|r| {
            let p_edited = match r.wild_type() {
                Some(wt) => (1.0 - wt.proportion).clamp(0.0, 1.0),
                None => {
                    warn!(
                        "{}: reference {} has no wild-type row; using p_edited = 1",
                        ds.editor_id, r.id
                    );
                    1.0
                }
            };
            EfficiencyTarget {
                reference_id: r.id.clone(),
                p_edited,
            }
        })
        .collect()
}

/// Edited outcomes renormalised to sum to one. References with no edited
/// reads are left out.
pub fn derive_proportion_targets(ds: &LibraryDataset) -> Vec<ProportionTarget> {
    let mut out = Vec::with_capacity(ds.references.len());
    for r in &ds.references {
        let edited: Vec<_> = r.outcomes.iter().filter(|o| !o.is_wild_type()).collect();
        let total: f64 = edited.iter().map(|o| o.proportion).sum();
        if total <= 0.0 {
            log::debug!(
                "{}: reference {} has no edited reads; excluded",
                ds.editor_id,
                r.id
            );
            continue;
        }
        out.push(ProportionTarget {
            reference_id: r.id.clone(),
            outcomes: edited.iter().map(|o| o.edits()).collect(),
            probabilities: edited.iter().map(|o| o.proportion / total).collect(),
        });
    }
    out
}

use rand::Rng;

use super::*;
use crate::nn::EncoderConfig;
use crate::numcore::{seeded, Graph, Tensor};
use crate::seqcore::{
    edit_mask, enumerate_edit_sets, EditSet, EditWindow, EditorClass, ReferenceSequence,
    RepresentationMode,
};

const MODE: RepresentationMode = RepresentationMode::ProtospacerPam;

fn abe(id: &str) -> EditorSpec {
    EditorSpec::new(id, EditorClass::ABE)
}

fn small() -> EncoderConfig {
    EncoderConfig::new(8, 2, 1)
}

fn reference(proto: &str) -> ReferenceSequence {
    ReferenceSequence::from_parts("", proto, "AGGC", "", MODE).unwrap()
}

fn random_reference(rng: &mut impl Rng) -> ReferenceSequence {
    let proto: String = (0..20)
        .map(|_| b"ACGT"[rng.gen_range(0..4)] as char)
        .collect();
    reference(&proto)
}

fn proportion(seed: u64, position_bias: bool) -> ProportionModel {
    ProportionModel::new(
        MODE,
        EditWindow::full(),
        small(),
        position_bias,
        vec![abe("e")],
        &mut seeded(seed),
    )
    .unwrap()
}

fn set_zero(store: &mut crate::numcore::ParamStore, id: crate::numcore::ParamId) {
    let z = Tensor::zeros(store.get(id).shape().to_vec());
    *store.get_mut(id) = z;
}

/// Output network reduced to fixed per-position probabilities of editing.
fn fixed_position_model(p_edit: &[(usize, f64)]) -> ProportionModel {
    let mut m = proportion(1, true);
    let head = m.branches[0].output.clone();
    set_zero(&mut m.params, head.proj.weight);
    set_zero(&mut m.params, head.proj.bias);
    let mut table = Tensor::zeros(vec![34, 2]);
    for &(t, p) in p_edit {
        table.data_mut()[t * 2] = p.ln();
        table.data_mut()[t * 2 + 1] = (1.0 - p).ln();
    }
    *m.params.get_mut(head.position_bias.unwrap()) = table;
    m
}

#[test]
fn efficiency_pair_is_complementary() {
    let m = EfficiencyModel::single(MODE, abe("e"), &mut seeded(2));
    let r = reference("ACGTACGTACGTACGTACGT");
    let mut g = Graph::inference();
    let z = m.logits(&mut g, &m.params, 0, &[&r], 0.0).unwrap();
    let p = g.softmax(z, 1).unwrap();
    let pair = g.value(p).data();
    assert!((pair[0] + pair[1] - 1.0).abs() < 1e-12);
    assert!(pair[0] > 0.0 && pair[0] < 1.0);
    assert_eq!(m.efficiency_forward(&r).unwrap(), pair[0]);
}

#[test]
fn zeroed_efficiency_head_gives_one_half() {
    let mut m = EfficiencyModel::single(MODE, abe("e"), &mut seeded(3));
    let out = m.branches[0].head.out.clone();
    set_zero(&mut m.params, out.weight);
    set_zero(&mut m.params, out.bias);
    let p = m
        .efficiency_forward(&reference("ACGTACGTACGTACGTACGT"))
        .unwrap();
    assert!((p - 0.5).abs() < 1e-15);
}

#[test]
fn mode_is_enforced() {
    let m = EfficiencyModel::single(MODE, abe("e"), &mut seeded(3));
    let r = reference("ACGTACGTACGTACGTACGT")
        .with_mode(RepresentationMode::Protospacer)
        .unwrap();
    assert!(matches!(
        m.efficiency_forward(&r),
        Err(ModelError::ModeMismatch { .. })
    ));
}

#[test]
fn position_factors() {
    let m = proportion(4, false);
    let none = reference("CCCCCCCCCCCCCCCCCCCC");
    let mask = edit_mask(&none, EditorClass::ABE, EditWindow::full());
    assert!(per_position_edit_probs(&m, 0, &none, EditSet::EMPTY, &mask)
        .unwrap()
        .is_empty());

    let r = reference("CACCACCCACCCCCCCCCCA");
    let mask = edit_mask(&r, EditorClass::ABE, EditWindow::full());
    let wt = per_position_edit_probs(&m, 0, &r, EditSet::EMPTY, &mask).unwrap();
    let one = per_position_edit_probs(&m, 0, &r, EditSet::from_positions([4]), &mask).unwrap();
    assert_eq!(wt.len(), 4);
    assert!(wt.iter().chain(&one).all(|&p| p > 0.0 && p < 1.0));
    assert!(per_position_edit_probs(&m, 0, &r, EditSet::from_positions([0]), &mask).is_err());

    // score is the product of the factors
    let edits = [EditSet::EMPTY, EditSet::from_positions([4])];
    let scores = outcome_scores(&m, &r, &edits).unwrap();
    assert!((scores[0] - wt.iter().product::<f64>()).abs() < 1e-12);
    assert!((scores[1] - one.iter().product::<f64>()).abs() < 1e-12);
}

#[test]
fn hand_products() {
    // protospacer A at index 2 and 6, flattened positions equal in this mode
    let r = reference("CCACCCACCCCCCCCCCCCC");
    let m = fixed_position_model(&[(2, 0.3)]);
    let mask = edit_mask(&r, EditorClass::ABE, EditWindow::new(1, 5).unwrap());
    assert_eq!(mask.count(), 1);
    let m = ProportionModel {
        window: EditWindow::new(1, 5).unwrap(),
        ..m
    };
    let s = outcome_scores(&m, &r, &[EditSet::from_positions([2])]).unwrap();
    assert!((s[0] - 0.3).abs() < 1e-12);

    let m = fixed_position_model(&[(2, 0.3), (6, 0.2)]);
    let s = outcome_scores(
        &m,
        &r,
        &[
            EditSet::from_positions([2, 6]),
            EditSet::from_positions([2]),
        ],
    )
    .unwrap();
    assert!((s[0] - 0.06).abs() < 1e-12);
    assert!((s[1] - 0.3 * 0.8).abs() < 1e-12);
}

#[test]
fn scores_follow_outcome_order() {
    let m = proportion(5, false);
    let r = reference("AACAGTACCAGTAAGTCAAT");
    let mask = edit_mask(&r, EditorClass::ABE, EditWindow::full());
    let sets = enumerate_edit_sets(&mask, true, 16).unwrap();
    let fwd = outcome_scores(&m, &r, &sets).unwrap();
    let rev: Vec<_> = sets.iter().rev().copied().collect();
    let back = outcome_scores(&m, &r, &rev).unwrap();
    for (a, b) in fwd.iter().zip(back.iter().rev()) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
    }
}

#[test]
fn normalisation_examples() {
    assert_eq!(
        normalize_scores(&[2.0, 2.0, 6.0]).unwrap(),
        vec![0.2, 0.2, 0.6]
    );
    let p = [0.1, 0.25, 0.65];
    let q = normalize_scores(&p).unwrap();
    for (a, b) in p.iter().zip(&q) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(normalize_scores(&[3.7]).unwrap(), vec![1.0]);
    assert!(matches!(
        normalize_scores(&[0.0, 0.0]),
        Err(ModelError::DegenerateScores)
    ));
    let l = normalize_log_scores(&[2f64.ln(), 2f64.ln(), 6f64.ln()]).unwrap();
    assert!((l[2] - 0.6).abs() < 1e-15);
}

#[test]
fn composition() {
    let full = compose_two_stage(0.48, &[0.35 / 0.48, 0.13 / 0.48]).unwrap();
    assert!((full[0] - 0.52).abs() < 1e-12);
    assert!((full[1] - 0.35).abs() < 1e-12);
    assert!((full[2] - 0.13).abs() < 1e-12);

    let zero = compose_two_stage(0.0, &[0.5, 0.5]).unwrap();
    assert_eq!(zero, vec![1.0, 0.0, 0.0]);
    assert!(compose_two_stage(0.5, &[0.5, 0.4]).is_err());

    let mut rng = seeded(9);
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let cond = normalize_scores(&raw).unwrap();
        let p = rng.gen::<f64>();
        let full = compose_two_stage(p, &cond).unwrap();
        assert!((full.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // marginalising the edited outcomes recovers p
        assert!((full[1..].iter().sum::<f64>() - p).abs() < 1e-12);
    }
}

#[test]
fn one_stage_contracts() {
    let m = OneStageModel::new(
        MODE,
        EditWindow::full(),
        small(),
        false,
        abe("e"),
        &mut seeded(6),
    )
    .unwrap();
    let r = reference("AACAGTACCAGTAAGTCAAT");
    let mask = edit_mask(&r, EditorClass::ABE, EditWindow::full());
    let sets = enumerate_edit_sets(&mask, true, 16).unwrap();
    let p = one_stage_forward(&m, &r, &sets).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(matches!(
        one_stage_forward(&m, &r, &sets[1..]),
        Err(ModelError::MissingWildType)
    ));

    let none = reference("CCCCCCCCCCCCCCCCCCCC");
    let d = m.predict_distribution("e", &none).unwrap();
    assert_eq!(d.probabilities, vec![1.0]);
}

#[test]
fn two_stage_distribution_is_normalised() {
    let m = TwoStageModel::new(
        MODE,
        EditWindow::full(),
        small(),
        false,
        abe("e"),
        &mut seeded(7),
    )
    .unwrap();
    let mut rng = seeded(70);
    for _ in 0..20 {
        let r = random_reference(&mut rng);
        let d = m.predict_distribution("e", &r).unwrap();
        assert!(d.probabilities.iter().all(|&p| p >= 0.0));
        assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(d.outcomes[0], EditSet::EMPTY);
    }
    let none = reference("CCCCCCCCCCCCCCCCCCCC");
    assert_eq!(
        m.predict_distribution("e", &none).unwrap().probabilities,
        vec![1.0]
    );
    assert!(matches!(
        m.predict_distribution("x", &none),
        Err(ModelError::UnknownEditor(_))
    ));
}

#[test]
fn sixteen_target_bases_do_not_underflow() {
    let m = proportion(8, false);
    let r = reference("AAAAAAAACAAAAAAAACCC");
    let mask = edit_mask(&r, EditorClass::ABE, EditWindow::full());
    assert_eq!(mask.count(), 16);
    let sets = enumerate_edit_sets(&mask, false, 16).unwrap();
    assert_eq!(sets.len(), 65_535);
    let scores = outcome_scores(&m, &r, &sets).unwrap();
    assert!(scores.iter().all(|&s| s > 0.0 && s.is_finite()));
    let p = normalize_scores(&scores).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

fn multitask(seed: u64) -> MultiTaskModel {
    MultiTaskModel::new(
        MODE,
        EditWindow::full(),
        small(),
        false,
        vec![abe("a"), abe("b")],
        &mut seeded(seed),
    )
    .unwrap()
}

/// Copy every parameter of branch `from` onto branch `to`.
fn copy_branch(m: &mut MultiTaskModel, from: &str, to: &str) {
    for store in [&mut m.efficiency.params, &mut m.proportion.params] {
        let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
        for n in names {
            let needle = format!(".{from}.");
            if n.contains(&needle) {
                let v = store.get(store.lookup(&n).unwrap()).clone();
                store
                    .set(&n.replace(&needle, &format!(".{to}.")), v)
                    .unwrap();
            }
        }
    }
}

#[test]
fn multitask_branches() {
    let r = reference("AACAGTACCAGTAAGTCAAT");
    let mask = edit_mask(&r, EditorClass::ABE, EditWindow::full());
    let sets = enumerate_edit_sets(&mask, false, 16).unwrap();
    let mut m = multitask(11);
    assert!(MultiTaskModel::new(
        MODE,
        EditWindow::full(),
        small(),
        false,
        vec![abe("a")],
        &mut seeded(0)
    )
    .is_err());
    assert!(matches!(
        multitask_forward(&m, "zz", &r, &sets),
        Err(ModelError::UnknownEditor(_))
    ));

    copy_branch(&mut m, "a", "b");
    let a = multitask_forward(&m, "a", &r, &sets).unwrap();
    let b = multitask_forward(&m, "b", &r, &sets).unwrap();
    assert_eq!(a, b);

    // perturb b's branch only
    let mut pert = m.clone();
    for store in [&mut pert.efficiency.params, &mut pert.proportion.params] {
        let ids: Vec<_> = store
            .ids()
            .filter(|&id| store.name(id).contains(".b."))
            .collect();
        for id in ids {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v += 0.05);
        }
    }
    assert_eq!(multitask_forward(&pert, "a", &r, &sets).unwrap(), a);
    assert_ne!(multitask_forward(&pert, "b", &r, &sets).unwrap(), b);

    // perturb the shared layers
    let mut shared = m.clone();
    for store in [&mut shared.efficiency.params, &mut shared.proportion.params] {
        let ids: Vec<_> = store
            .ids()
            .filter(|&id| {
                store.name(id).contains(".shared.") || store.name(id).starts_with("prop.ref.")
            })
            .collect();
        for id in ids {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v += 0.05);
        }
    }
    let sa = multitask_forward(&shared, "a", &r, &sets).unwrap();
    let sb = multitask_forward(&shared, "b", &r, &sets).unwrap();
    assert_ne!(sa.0, a.0);
    assert_ne!(sb.0, b.0);
    assert_ne!(sa.1, a.1);
    assert_ne!(sb.1, b.1);
}

#[test]
fn wild_type_rejected_by_two_stage_pair() {
    let m = TwoStageModel::new(
        MODE,
        EditWindow::full(),
        small(),
        false,
        abe("e"),
        &mut seeded(12),
    )
    .unwrap();
    let r = reference("AACAGTACCAGTAAGTCAAT");
    assert!(matches!(
        m.forward(&r, &[EditSet::EMPTY]),
        Err(ModelError::UnexpectedWildType)
    ));
    let (p, c) = m
        .forward(
            &r,
            &[EditSet::from_positions([0]), EditSet::from_positions([1])],
        )
        .unwrap();
    assert!(p > 0.0 && p < 1.0);
    assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

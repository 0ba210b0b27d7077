use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::chem::parse_smiles;
use crate::junctree::{build_vocabulary, decompose, Vocabulary};
use crate::nn::{Grads, ParamStore, Tensor};

const CORPUS: [&str; 6] = [
    "CCO",
    "Cc1ccccc1",
    "CC(=O)Oc1ccccc1C(=O)O",
    "C1CCNCC1",
    "OCC(N)C",
    "C",
];

fn vocab() -> Vocabulary {
    let mols: Vec<_> = CORPUS.iter().map(|s| parse_smiles(s).unwrap()).collect();
    build_vocabulary(&mols).unwrap()
}

fn cfg(v: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: v.len(),
        hidden: 8,
        latent: 4,
        depth: 3,
        prop_dim: 1,
    }
}

fn zeroed(store: &mut ParamStore) {
    for id in 0..store.len() {
        let shape = store.tensor(id).shape().to_vec();
        *store.tensor_mut(id) = Tensor::zeros(shape);
    }
}

fn prepared(v: &Vocabulary, s: &str) -> PreparedMolecule {
    PreparedMolecule::new(s, parse_smiles(s).unwrap(), v, vec![0.5]).unwrap()
}

#[test]
fn zero_parameters_give_neutral_outputs() {
    let v = vocab();
    let (model, mut store) = Model::init(cfg(&v), 1).unwrap();
    zeroed(&mut store);
    let mut tape = Tape::new(&store);
    let mol = parse_smiles("CC(=O)O").unwrap();
    let h = encode_graphs(&mut tape, &model, &GraphBatch::single(&mol)).unwrap();
    assert!(tape.value(h).iter().all(|&x| x == 0.0));

    let prep = prepared(&v, "Cc1ccccc1");
    let z = tape.zeros(1, 4);
    let trace = decode_teacher_forced(&mut tape, &model, z, &[0.3], &prep.tree).unwrap();
    for s in &trace.steps {
        if let TraceStep::Topology { p, .. } = s {
            assert_eq!(*p, 0.5);
        }
    }
    let mut feasible = FeasibleLabels::new(&v);
    let out = decode_free(&mut tape, &model, z, &[0.3], &mut feasible, 30).unwrap();
    // p = 0.5 does not expand
    assert_eq!(out.labels.len(), 1);
    let row = tape.value(out.rows[0]);
    assert!(row
        .iter()
        .all(|&q| (q - 1.0 / v.len() as f64).abs() < 1e-15));

    let rows = one_hot_rows(&mut tape, &prep.tree.node_labels, v.len()).unwrap();
    let c = extractor_forward(&mut tape, &model, &prep.tree_input, rows).unwrap();
    assert_eq!(tape.value(c), &[0.5]);
}

#[test]
fn single_atom_and_single_node_cases() {
    let v = vocab();
    let (model, store) = Model::init(cfg(&v), 2).unwrap();
    let mut tape = Tape::new(&store);
    let mol = parse_smiles("C").unwrap();
    let h = encode_graphs(&mut tape, &model, &GraphBatch::single(&mol)).unwrap();
    // relu(U1 x) with no messages
    let x = tape
        .constant(1, ATOM_FEATURES, atom_features(&mol, 0, false).to_vec())
        .unwrap();
    let u1 = tape.param(&model.names.graph.u1).unwrap();
    let e = tape.linear(x, u1).unwrap();
    let e = tape.relu(e);
    assert_eq!(tape.value(h), tape.value(e));

    let prep = prepared(&v, "C");
    let rows = one_hot_rows(&mut tape, &prep.tree.node_labels, v.len()).unwrap();
    let enc = encode_tree(&mut tape, &model, &prep.tree_input, rows).unwrap();
    assert_eq!(enc.messages, 0);
    let z = tape.zeros(1, 4);
    let trace = decode_teacher_forced(&mut tape, &model, z, &[0.1], &prep.tree).unwrap();
    assert_eq!(trace.topology_decisions(), 1);
    assert_eq!(trace.label_accuracy_counts().1, 1);
}

#[test]
fn tree_schedule_sends_two_messages_per_edge() {
    let v = vocab();
    let (model, store) = Model::init(cfg(&v), 3).unwrap();
    let mut tape = Tape::new(&store);
    let prep = prepared(&v, "CC(=O)Oc1ccccc1C(=O)O");
    let rows = one_hot_rows(&mut tape, &prep.tree.node_labels, v.len()).unwrap();
    let enc = encode_tree(&mut tape, &model, &prep.tree_input, rows).unwrap();
    assert_eq!(enc.messages, 2 * prep.tree.edges.len());

    let other = TreeInput::new(
        prep.tree.len(),
        &prep.tree.edges,
        (prep.tree.root + 1) % prep.tree.len(),
    );
    let rows = one_hot_rows(&mut tape, &prep.tree.node_labels, v.len()).unwrap();
    let enc2 = encode_tree(&mut tape, &model, &other, rows).unwrap();
    assert_ne!(tape.value(enc.h_tree), tape.value(enc2.h_tree));
}

#[test]
fn graph_encoding_is_permutation_invariant() {
    let v = vocab();
    let (model, store) = Model::init(cfg(&v), 4).unwrap();
    let mol = parse_smiles("CC(=O)Oc1ccccc1C(=O)O").unwrap();
    let n = mol.num_atoms();
    let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
    let mut tape = Tape::new(&store);
    let a = encode_graphs(&mut tape, &model, &GraphBatch::single(&mol)).unwrap();
    let b = encode_graphs(&mut tape, &model, &GraphBatch::single(&mol.permuted(&perm))).unwrap();
    for (x, y) in tape.value(a).iter().zip(tape.value(b)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn candidate_scoring_edge_cases() {
    let v = vocab();
    let (model, store) = Model::init(cfg(&v), 5).unwrap();
    let mut tape = Tape::new(&store);
    let mol = parse_smiles("CCO").unwrap();
    let z = tape.constant(1, 4, vec![0.3, -0.2, 0.1, 0.9]).unwrap();
    let one = GraphBatch::single(&mol);
    let (_, loss) = score_candidates(&mut tape, &model, &one, z, &[0.5], Some(0)).unwrap();
    assert_eq!(tape.scalar(loss.unwrap()), 0.0);
    let same = GraphBatch::new(&[(&mol, &[]), (&mol, &[]), (&mol, &[])]);
    let (_, loss) = score_candidates(&mut tape, &model, &same, z, &[0.5], Some(2)).unwrap();
    assert!((tape.scalar(loss.unwrap()) - 3f64.ln()).abs() < 1e-12);
    let empty = GraphBatch::new(&[]);
    assert_eq!(
        score_candidates(&mut tape, &model, &empty, z, &[0.5], None).unwrap_err(),
        ModelError::EmptyCandidates
    );
    assert!(matches!(
        score_candidates(&mut tape, &model, &one, z, &[0.5, 0.5], None),
        Err(ModelError::PropertyDim { .. })
    ));
}

#[test]
fn extractor_hard_and_one_hot_soft_agree_exactly() {
    let v = vocab();
    let (model, mut store) = Model::init(cfg(&v), 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // nonzero output layer so the check is not trivial
    let id = store.id(&model.names.ext_w).unwrap();
    store
        .tensor_mut(id)
        .data_mut()
        .iter_mut()
        .for_each(|w| *w = rand::Rng::random_range(&mut rng, -1.0..1.0));
    let prep = prepared(&v, "CC(=O)Oc1ccccc1C(=O)O");
    let mut tape = Tape::new(&store);
    let hard = one_hot_rows(&mut tape, &prep.tree.node_labels, v.len()).unwrap();
    let a = extractor_forward(&mut tape, &model, &prep.tree_input, hard).unwrap();
    // the same rows produced by a softmax over saturated logits
    let mut logits = vec![-1e4; prep.tree.len() * v.len()];
    for (i, &l) in prep.tree.node_labels.iter().enumerate() {
        logits[i * v.len() + l] = 0.0;
    }
    let lg = tape.constant(prep.tree.len(), v.len(), logits).unwrap();
    let soft = tape.softmax(lg);
    assert_eq!(tape.value(soft), tape.value(hard));
    let b = extractor_forward(&mut tape, &model, &prep.tree_input, soft).unwrap();
    assert_eq!(tape.value(a), tape.value(b));
}

#[test]
fn vae_loss_components() {
    let v = vocab();
    let (model, store) = Model::init(cfg(&v), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in CORPUS {
        let prep = prepared(&v, s);
        let mut tape = Tape::new(&store);
        let l = vae_loss(&mut tape, &model, &prep, 0.0, &mut rng).unwrap();
        assert!(l.kl >= 0.0 && l.topo >= 0.0 && l.label >= 0.0 && l.assembly >= 0.0);
        let expect = l.topo + l.label + l.assembly;
        assert!((tape.scalar(l.total) - expect).abs() < 1e-9);
        let g: Grads = tape.backward(l.total).unwrap();
        assert!(g.is_finite());
    }
    // a linear chain has one candidate per step: no assembly loss
    let prep = prepared(&v, "CCO");
    assert!(prep.steps.is_empty());
}

#[test]
fn soft_decode_matches_free_decode() {
    let v = vocab();
    let (model, store) = Model::init(cfg(&v), 8).unwrap();
    let mut tape = Tape::new(&store);
    let mut feasible = FeasibleLabels::new(&v);
    for k in 0..5 {
        let z = tape
            .constant(1, 4, vec![k as f64 * 0.7 - 1.0, 0.5, -0.3 * k as f64, 1.0])
            .unwrap();
        let out = decode_free(&mut tape, &model, z, &[1.0], &mut feasible, 12).unwrap();
        assert!(out.labels.len() <= 12);
        for (i, &r) in out.rows.iter().enumerate() {
            let row = tape.value(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &x)| if x > row[b] { j } else { b });
            assert_eq!(best, out.labels[i]);
        }
        let tree = out.tree(&v).unwrap();
        assert!(tree.is_tree());
    }
}

#[test]
fn oov_molecule_is_rejected() {
    let v = vocab();
    let err = PreparedMolecule::new("c1ccncc1", parse_smiles("c1ccncc1").unwrap(), &v, vec![0.0]);
    assert!(matches!(
        err,
        Err(ModelError::Junctree(
            crate::junctree::JunctreeError::OutOfVocabulary(_)
        ))
    ));
    let _ = decompose(&parse_smiles("C").unwrap()).unwrap();
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{consistency_loss, ConsistencyOption, Result};
use crate::junctree::Vocabulary;
use crate::model::{
    decode_teacher_forced, encode_molecule, encode_tree, extractor_forward, groups, one_hot_rows,
    score_candidates, vae_loss, FeasibleLabels, Model, ModelError, PreparedMolecule,
};
use crate::nn::{grad_check, GradCheckReport, Grads, NnError, ParamStore, Tape, Var};

/// Gradient check of one network or objective.
#[derive(Debug, Clone)]
pub struct NetworkCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn nn(e: ModelError) -> NnError {
    match e {
        ModelError::Nn(e) => e,
        other => NnError::NumericFault(other.to_string()),
    }
}

/// Fixed random linear functional, so no output coordinate's gradient
/// cancels against another's.
fn project(tape: &mut Tape<'_>, v: Var, seed: u64) -> std::result::Result<Var, NnError> {
    let (r, c) = tape.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(
        r,
        c,
        (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

fn total(tape: &mut Tape<'_>, terms: &[Var]) -> std::result::Result<(f64, Grads), NnError> {
    let all = tape.stack(terms)?;
    let loss = tape.sum(all);
    Ok((tape.scalar(loss), tape.backward(loss)?))
}

/// Checks autodiff against central differences, `probes` parameters each,
/// for the full VAE objective, every sub-network in isolation and both
/// consistency losses, on `data` (a few molecules suffice).
///
/// Runs on a copy of `store` in which zero-valued extractor weights are
/// replaced by small random values; at zero the extractor's output layer
/// would hide every gradient path behind it.
pub fn check_networks(
    model: &Model,
    store: &ParamStore,
    vocab: &Vocabulary,
    data: &[PreparedMolecule],
    probes: usize,
    seed: u64,
) -> Result<Vec<NetworkCheck>> {
    let mut store = store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in 0..store.len() {
        if groups::is_extractor(store.name(id)) {
            for w in store.tensor_mut(id).data_mut() {
                if *w == 0.0 {
                    *w = rng.random_range(-0.5..0.5);
                }
            }
        }
    }
    let latent = model.cfg.latent;
    let c: Vec<f64> = (0..model.cfg.prop_dim)
        .map(|i| 0.9 - 0.1 * i as f64)
        .collect();
    let z_fixed = |tape: &mut Tape<'_>, k: f64| {
        tape.constant(
            1,
            latent,
            (0..latent).map(|i| (i as f64 * k).sin()).collect(),
        )
    };
    let feasible = FeasibleLabels::complete(vocab);
    let mut out = Vec::new();
    let mut run = |name: &'static str,
                   select: &dyn Fn(&str) -> bool,
                   f: &dyn Fn(&mut Tape<'_>) -> std::result::Result<Vec<Var>, NnError>|
     -> Result<()> {
        let report = grad_check(&mut store, probes, seed, select, |s| {
            let mut tape = Tape::new(s);
            let terms = f(&mut tape)?;
            total(&mut tape, &terms)
        })?;
        out.push(NetworkCheck { name, report });
        Ok(())
    };

    run("full objective", &groups::is_vae, &|tape| {
        let mut terms = Vec::new();
        for (k, prep) in data.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            terms.push(
                vae_loss(tape, model, prep, 0.5, &mut rng)
                    .map_err(nn)?
                    .total,
            );
        }
        Ok(terms)
    })?;
    run(
        "graph encoder",
        &|n| n.starts_with(groups::GRAPH_ENCODER),
        &|tape| {
            let mut terms = Vec::new();
            for (k, prep) in data.iter().enumerate() {
                let code = encode_molecule::<ChaCha8Rng>(tape, model, prep, None).map_err(nn)?;
                let both = tape.concat(&[code.mean_graph, code.log_var_graph])?;
                terms.push(project(tape, both, 2 * k as u64)?);
                terms.push(project(tape, code.h_graph, 2 * k as u64 + 1)?);
            }
            Ok(terms)
        },
    )?;
    run(
        "tree encoder",
        &|n| n.starts_with(groups::TREE_ENCODER),
        &|tape| {
            let mut terms = Vec::new();
            for (k, prep) in data.iter().enumerate() {
                let rows = one_hot_rows(tape, &prep.tree.node_labels, vocab.len()).map_err(nn)?;
                let enc = encode_tree(tape, model, &prep.tree_input, rows).map_err(nn)?;
                let both = tape.concat(&[enc.mean, enc.log_var])?;
                terms.push(project(tape, both, k as u64)?);
            }
            Ok(terms)
        },
    )?;
    run(
        "tree decoder",
        &|n| n.starts_with(groups::TREE_DECODER),
        &|tape| {
            let mut terms = Vec::new();
            for prep in data {
                let z = z_fixed(tape, 0.37)?;
                let trace = decode_teacher_forced(tape, model, z, &c, &prep.tree).map_err(nn)?;
                terms.push(trace.topo_loss);
                terms.push(trace.label_loss);
            }
            Ok(terms)
        },
    )?;
    run(
        "graph decoder",
        &|n| n.starts_with(groups::GRAPH_DECODER) || n.starts_with(groups::GRAPH_ENCODER),
        &|tape| {
            let mut terms = Vec::new();
            for prep in data {
                let z = z_fixed(tape, 0.61)?;
                for st in &prep.steps {
                    let (_, l) = score_candidates(tape, model, &st.batch, z, &c, Some(st.target))
                        .map_err(nn)?;
                    terms.push(l.expect("target given"));
                }
            }
            if terms.is_empty() {
                terms.push(tape.zeros(1, 1));
            }
            Ok(terms)
        },
    )?;
    run("extractor", &groups::is_extractor, &|tape| {
        let mut terms = Vec::new();
        for prep in data {
            let rows = one_hot_rows(tape, &prep.tree.node_labels, vocab.len()).map_err(nn)?;
            let pred = extractor_forward(tape, model, &prep.tree_input, rows).map_err(nn)?;
            let t = tape.constant(1, c.len(), c.clone())?;
            let d = tape.sub(pred, t)?;
            let sq = tape.mul(d, d)?;
            terms.push(tape.sum(sq));
        }
        Ok(terms)
    })?;
    // the decoder sees a detached posterior mean, so the encoders are
    // deliberately outside the consistency checks
    for (name, option) in [
        ("property consistency", ConsistencyOption::I),
        ("latent consistency", ConsistencyOption::Ii),
    ] {
        let select = move |n: &str| {
            n.starts_with(groups::TREE_DECODER)
                || (option.uses_property() && groups::is_extractor(n))
        };
        run(name, &select, &|tape| {
            let mut terms = Vec::new();
            for prep in data {
                terms.push(
                    consistency_loss(tape, model, &feasible, prep, &c, option, 12).map_err(
                        |e| match e {
                            super::TrainError::Model(m) => nn(m),
                            other => NnError::NumericFault(other.to_string()),
                        },
                    )?,
                );
            }
            Ok(terms)
        })?;
    }
    Ok(out)
}

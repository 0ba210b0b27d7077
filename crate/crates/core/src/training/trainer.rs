use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    ConsistencyOption, ConsistencyTarget, Control, Result, Stage, StageState, StepRecord,
    TrainConfig, TrainError, TrainSink,
};
use crate::junctree::Vocabulary;
use crate::model::{
    decode_free, decode_teacher_forced, encode_molecule, encode_tree, extractor_forward, groups,
    one_hot_rows, vae_loss, FeasibleLabels, Model, PreparedMolecule, TreeInput,
};
use crate::nn::{adam_step, AdamConfig, Grads, ParamStore, Tape, Var};

/// SplitMix64 finalizer.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator for `(seed, tag, a, b)`.
fn stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed ^ mix(tag)) ^ a) ^ b))
}

fn squared_error(tape: &mut Tape<'_>, pred: Var, target: &[f64]) -> Result<Var> {
    let t = tape.constant(1, target.len(), target.to_vec())?;
    let d = tape.sub(pred, t)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.sum(sq))
}

fn is_tree_decoder(name: &str) -> bool {
    name.starts_with(groups::TREE_DECODER)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    /// Steps taken by this call.
    pub steps_run: u64,
    /// Stage step counter after this call (includes resumed progress).
    pub total_steps: u64,
    pub converged: bool,
    /// Evaluation values in order (extractor: train MSE; VAE: mean loss).
    pub evals: Vec<f64>,
    pub wall_clock: Duration,
}

/// Per-molecule result of a forward/backward pass.
struct Item {
    grads: Grads,
    loss: f64,
    parts: [f64; 4],
    hits: usize,
    total: usize,
}

pub struct Trainer<'a> {
    model: &'a Model,
    cfg: &'a TrainConfig,
    vocab: &'a Vocabulary,
    data: &'a [PreparedMolecule],
    feasible: OnceLock<FeasibleLabels<'a>>,
    pool: rayon::ThreadPool,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a Model,
        cfg: &'a TrainConfig,
        vocab: &'a Vocabulary,
        data: &'a [PreparedMolecule],
    ) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        if model.cfg.prop_dim != cfg.prop_dim || model.cfg.vocab_size != vocab.len() {
            return Err(TrainError::Config(
                "model does not match config or vocabulary".into(),
            ));
        }
        if let Some(p) = data.iter().find(|p| p.props.len() != cfg.prop_dim) {
            return Err(TrainError::Config(format!(
                "{}: expected {} properties",
                p.smiles, cfg.prop_dim
            )));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(Trainer {
            model,
            cfg,
            vocab,
            data,
            feasible: OnceLock::new(),
            pool,
        })
    }

    fn batches_per_epoch(&self) -> u64 {
        self.data.len().div_ceil(self.cfg.batch_size) as u64
    }

    /// Molecule indices of step `s` in a stage's shuffled epoch sequence.
    fn batch(&self, stage: Stage, s: u64) -> Vec<usize> {
        let (n, m) = (self.data.len(), self.cfg.batch_size);
        let bpe = self.batches_per_epoch();
        let (epoch, b) = (s / bpe, (s % bpe) as usize);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut stream(self.cfg.seed, 100 + stage.tag(), epoch, 0));
        perm[b * m..((b + 1) * m).min(n)].to_vec()
    }

    /// Runs `f` per batch member in parallel and returns results in batch
    /// order, so the reduction is independent of scheduling.
    fn per_item<F>(&self, batch: &[usize], f: F) -> Result<Vec<Item>>
    where
        F: Fn(usize, &PreparedMolecule) -> Result<Item> + Sync,
    {
        let out: Vec<Result<Item>> = self.pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| f(k, &self.data[i]))
                .collect()
        });
        out.into_iter().collect()
    }

    fn reduce(store: &ParamStore, items: &[Item], select: fn(&str) -> bool) -> Grads {
        let mut g = Grads::empty(store.len());
        for it in items {
            g.merge(&it.grads);
        }
        g.scale(1.0 / items.len() as f64);
        g.fill_zeros(store, select);
        g
    }

    fn adam(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }

    /// Minimizes `||c - c~||^2` over the extractor parameters until the
    /// train MSE converges or the step cap is reached.
    pub fn pretrain_extractor(
        &self,
        store: &mut ParamStore,
        sink: &mut dyn TrainSink,
    ) -> Result<StageReport> {
        let t0 = Instant::now();
        let stage = Stage::Extractor;
        let mut st = StageState::load(store, stage);
        let (mut evals, start) = (Vec::new(), st.step);
        while !st.converged && st.step < self.cfg.extractor_steps {
            let s = st.step;
            let batch = self.batch(stage, s);
            let snapshot: &ParamStore = store;
            let items = self.per_item(&batch, |_, prep| {
                let mut tape = Tape::new(snapshot);
                let rows =
                    one_hot_rows(&mut tape, &prep.tree.node_labels, self.model.cfg.vocab_size)?;
                let c = extractor_forward(&mut tape, self.model, &prep.tree_input, rows)?;
                let loss = squared_error(&mut tape, c, &prep.props)?;
                Ok(Item {
                    grads: tape.backward(loss)?,
                    loss: tape.scalar(loss),
                    parts: [0.0; 4],
                    hits: 0,
                    total: 0,
                })
            })?;
            let grads = Self::reduce(store, &items, groups::is_extractor);
            adam_step(
                store,
                grads,
                &Self::adam(self.cfg.lr_extractor),
                groups::is_extractor,
            )?;
            let loss = items.iter().map(|i| i.loss).sum::<f64>() / items.len() as f64;
            let mut rec = StepRecord::new(stage, s, batch.len(), loss);
            st.step += 1;
            if st.step.is_multiple_of(self.cfg.eval_every) {
                let mse = extractor_mse(self.model, store, self.data)?;
                rec.train_mse = Some(mse);
                evals.push(mse);
                st.push_eval(mse, self.cfg.convergence_window, self.cfg.convergence_tol);
            }
            st.save(store, stage);
            if sink.record(&rec, store).map_err(TrainError::Sink)? == Control::Stop {
                break;
            }
        }
        Ok(StageReport {
            stage,
            steps_run: st.step - start,
            total_steps: st.step,
            converged: st.converged,
            evals,
            wall_clock: t0.elapsed(),
        })
    }

    /// One teacher-forced VAE step at VAE step `s`.
    fn vae_step(&self, store: &mut ParamStore, s: u64) -> Result<StepRecord> {
        let batch = self.batch(Stage::Vae, s);
        let beta = self.cfg.beta_at(s);
        let snapshot: &ParamStore = store;
        let items = self.per_item(&batch, |k, prep| {
            let mut rng = stream(self.cfg.seed, Stage::Vae.tag(), s, k as u64);
            let mut tape = Tape::new(snapshot);
            let l = vae_loss(&mut tape, self.model, prep, beta, &mut rng)?;
            Ok(Item {
                grads: tape.backward(l.total)?,
                loss: tape.scalar(l.total),
                parts: [l.kl, l.topo, l.label, l.assembly],
                hits: l.label_hits,
                total: l.label_total,
            })
        })?;
        let grads = Self::reduce(store, &items, groups::is_vae);
        adam_step(store, grads, &Self::adam(self.cfg.lr_vae), groups::is_vae)?;
        let n = items.len() as f64;
        let mean = |f: &dyn Fn(&Item) -> f64| items.iter().map(f).sum::<f64>() / n;
        let mut rec = StepRecord::new(Stage::Vae, s, batch.len(), mean(&|i| i.loss));
        rec.kl = Some(mean(&|i| i.parts[0]));
        rec.topo = Some(mean(&|i| i.parts[1]));
        rec.label = Some(mean(&|i| i.parts[2]));
        rec.assembly = Some(mean(&|i| i.parts[3]));
        rec.beta = Some(beta);
        let (hits, total) = items
            .iter()
            .fold((0, 0), |(h, t), i| (h + i.hits, t + i.total));
        rec.label_acc = Some(hits as f64 / total.max(1) as f64);
        Ok(rec)
    }

    /// Minimizes the VAE objective with KL warm-up until the mean batch
    /// loss converges or `vae_steps` is reached.
    pub fn pretrain_vae(
        &self,
        store: &mut ParamStore,
        sink: &mut dyn TrainSink,
    ) -> Result<StageReport> {
        let t0 = Instant::now();
        let stage = Stage::Vae;
        let mut st = StageState::load(store, stage);
        let (mut evals, start) = (Vec::new(), st.step);
        while !st.converged && st.step < self.cfg.vae_steps {
            let rec = self.vae_step(store, st.step)?;
            st.step += 1;
            st.accumulate(rec.loss);
            if st.step.is_multiple_of(self.cfg.eval_every) {
                let v = st.take_mean();
                evals.push(v);
                st.push_eval(v, self.cfg.convergence_window, self.cfg.convergence_tol);
            }
            st.save(store, stage);
            if sink.record(&rec, store).map_err(TrainError::Sink)? == Control::Stop {
                break;
            }
        }
        Ok(StageReport {
            stage,
            steps_run: st.step - start,
            total_steps: st.step,
            converged: st.converged,
            evals,
            wall_clock: t0.elapsed(),
        })
    }

    fn feasible(&self) -> &FeasibleLabels<'a> {
        self.feasible
            .get_or_init(|| FeasibleLabels::complete(self.vocab))
    }

    /// Consistency loss of one molecule (unweighted) and its gradients
    /// scaled by `lambda`.
    fn consistency_item(
        &self,
        store: &ParamStore,
        j: u64,
        k: usize,
        prep: &PreparedMolecule,
    ) -> Result<Item> {
        let cfg = self.cfg;
        let mut rng = stream(cfg.seed, Stage::Joint.tag(), j, k as u64);
        let c: Vec<f64> = match cfg.consistency_target {
            ConsistencyTarget::Sampled => (0..cfg.prop_dim).map(|_| rng.random::<f64>()).collect(),
            ConsistencyTarget::Data => prep.props.clone(),
        };
        let mut tape = Tape::new(store);
        let raw = consistency_loss(
            &mut tape,
            self.model,
            self.feasible(),
            prep,
            &c,
            cfg.option,
            cfg.max_nodes,
        )?;
        let loss = tape.scale(raw, cfg.lambda);
        Ok(Item {
            grads: tape.backward(loss)?,
            loss: tape.scalar(raw),
            parts: [0.0; 4],
            hits: 0,
            total: 0,
        })
    }

    /// Joint loop for `epochs` passes: a VAE step, then a consistency step
    /// on the same molecules that updates the tree decoder only. The
    /// extractor group is copied in from `extractor` and never updated.
    pub fn joint_loop(
        &self,
        vae: &mut ParamStore,
        extractor: &ParamStore,
        sink: &mut dyn TrainSink,
    ) -> Result<StageReport> {
        let t0 = Instant::now();
        let cfg = self.cfg;
        vae.copy_group_from(extractor, groups::EXTRACTOR)?;
        let stage = Stage::Joint;
        let mut st = StageState::load(vae, stage);
        let start = st.step;
        let total = cfg.epochs as u64 * self.batches_per_epoch();
        let consistency_on = cfg.option != ConsistencyOption::None && cfg.lambda > 0.0;
        while st.step < total {
            let j = st.step;
            let (do_vae, do_cons) = if cfg.alternate {
                (j.is_multiple_of(2), consistency_on && j % 2 == 1)
            } else {
                (true, consistency_on)
            };
            let mut vst = StageState::load(vae, Stage::Vae);
            let (mut rec, batch) = if do_vae {
                let batch = self.batch(Stage::Vae, vst.step);
                let rec = self.vae_step(vae, vst.step)?;
                vst.step += 1;
                vst.save(vae, Stage::Vae);
                (rec, batch)
            } else {
                let batch = self.batch(stage, j);
                (StepRecord::new(stage, j, batch.len(), 0.0), batch)
            };
            rec.stage = stage;
            rec.step = j;
            if do_cons {
                let snapshot: &ParamStore = vae;
                let items = self.per_item(&batch, |k, prep| {
                    self.consistency_item(snapshot, j, k, prep)
                })?;
                let grads = Self::reduce(vae, &items, is_tree_decoder);
                adam_step(vae, grads, &Self::adam(cfg.lr_joint), is_tree_decoder)?;
                rec.consistency =
                    Some(items.iter().map(|i| i.loss).sum::<f64>() / items.len() as f64);
            }
            st.step += 1;
            st.save(vae, stage);
            if sink.record(&rec, vae).map_err(TrainError::Sink)? == Control::Stop {
                break;
            }
        }
        Ok(StageReport {
            stage,
            steps_run: st.step - start,
            total_steps: st.step,
            converged: st.step >= total,
            evals: Vec::new(),
            wall_clock: t0.elapsed(),
        })
    }
}

/// Unweighted consistency loss of one molecule decoded under `c`: the
/// squared extractor error on the soft tree (property term) and/or the
/// squared distance between the tree posterior mean and the soft tree's
/// re-encoded mean (latent term). The posterior mean is detached, so the
/// gradient reaches the tree decoder, the extractor and, for the latent
/// term, the tree encoder through the re-encoding only.
pub fn consistency_loss(
    tape: &mut Tape<'_>,
    model: &Model,
    feasible: &FeasibleLabels<'_>,
    prep: &PreparedMolecule,
    c: &[f64],
    option: ConsistencyOption,
    max_nodes: usize,
) -> Result<Var> {
    if option == ConsistencyOption::None {
        return Err(TrainError::Config("consistency option is `none`".into()));
    }
    let rows = one_hot_rows(tape, &prep.tree.node_labels, model.cfg.vocab_size)?;
    let enc = encode_tree(tape, model, &prep.tree_input, rows)?;
    let mean = tape.value(enc.mean).to_vec();
    let z = tape.constant(1, mean.len(), mean.clone())?;
    let mut feasible = feasible.clone();
    let out = decode_free(tape, model, z, c, &mut feasible, max_nodes)?;
    let soft = tape.stack(&out.rows)?;
    let input = TreeInput::new(out.labels.len(), &out.edges, 0);
    let mut terms = Vec::new();
    if option.uses_property() {
        let pred = extractor_forward(tape, model, &input, soft)?;
        terms.push(squared_error(tape, pred, c)?);
    }
    if option.uses_latent() {
        let re = encode_tree(tape, model, &input, soft)?;
        terms.push(squared_error(tape, re.mean, &mean)?);
    }
    let all = tape.stack(&terms)?;
    Ok(tape.sum(all))
}

/// Teacher-forced label accuracy with posterior-mean latents.
pub fn label_accuracy(model: &Model, store: &ParamStore, data: &[PreparedMolecule]) -> Result<f64> {
    let counts: Vec<Result<(usize, usize)>> = data
        .par_iter()
        .map(|prep| {
            let mut tape = Tape::new(store);
            let code = encode_molecule::<ChaCha8Rng>(&mut tape, model, prep, None)?;
            let trace =
                decode_teacher_forced(&mut tape, model, code.z_tree, &prep.props, &prep.tree)?;
            Ok(trace.label_accuracy_counts())
        })
        .collect();
    let (mut hits, mut total) = (0, 0);
    for c in counts {
        let (h, t) = c?;
        hits += h;
        total += t;
    }
    Ok(hits as f64 / total.max(1) as f64)
}

/// Mean squared extractor error over molecules and property dimensions.
pub fn extractor_mse(model: &Model, store: &ParamStore, data: &[PreparedMolecule]) -> Result<f64> {
    let errs: Vec<Result<f64>> = data
        .par_iter()
        .map(|prep| {
            let mut tape = Tape::new(store);
            let rows = one_hot_rows(&mut tape, &prep.tree.node_labels, model.cfg.vocab_size)?;
            let c = extractor_forward(&mut tape, model, &prep.tree_input, rows)?;
            Ok(tape
                .value(c)
                .iter()
                .zip(&prep.props)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>())
        })
        .collect();
    let mut sum = 0.0;
    for e in errs {
        sum += e?;
    }
    Ok(sum / (data.len() * model.cfg.prop_dim).max(1) as f64)
}

//! The subcommands. Each returns a summary for the caller to print and
//! maps failures onto exit codes.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cjtvae_core::chem::io::{read_corpus, ScoreTable};
use cjtvae_core::chem::{
    morgan_fingerprint, normalize_scores, parse_smiles, tanimoto, write_smiles, MolGraph,
};
use cjtvae_core::junctree::{build_vocabulary, decompose, Vocabulary};
use cjtvae_core::model::{
    generate as decode, FeasibleLabels, Model, ModelConfig, ModelError, PreparedMolecule,
};
use cjtvae_core::nn::{load_checkpoint, save_checkpoint, NnError, ParamStore};
use cjtvae_core::training::{
    check_networks, Control, NetworkCheck, Stage, StageReport, StageState, StepRecord, TrainConfig,
    TrainError, TrainSink, Trainer,
};
use log::{info, warn};

use crate::config::{require, RunConfig};
use crate::error::{ExitCode, Failure, Result, EXIT_FAILURE, EXIT_NUMERIC, EXIT_USAGE};
use crate::records::{EvalRecord, Status};

/// Checkpoint metadata key holding the vocabulary file hash.
pub const VOCAB_HASH_KEY: &str = "vocab.hash";
pub const THREADS_ENV: &str = "CJTVAE_THREADS";
pub const GRAD_TOLERANCE: f64 = 1e-4;

fn train_failure(e: TrainError) -> Failure {
    let code = match e {
        TrainError::Numeric(_) | TrainError::Model(ModelError::Nn(NnError::NumericFault(_))) => {
            EXIT_NUMERIC
        }
        TrainError::Config(_) | TrainError::EmptyCorpus => EXIT_USAGE,
        _ => EXIT_FAILURE,
    };
    Failure {
        code,
        error: e.into(),
    }
}

fn model_failure(e: ModelError) -> Failure {
    train_failure(e.into())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Parses every corpus line, logging and counting the failures.
fn parse_lines(path: &Path) -> Result<(Vec<(String, MolGraph)>, usize)> {
    require(path, "corpus")?;
    let mut ok = Vec::new();
    let mut skipped = 0;
    for line in read_corpus(path)? {
        match parse_smiles(&line.smiles) {
            Ok(m) => ok.push((line.smiles, m)),
            Err(e) => {
                warn!(
                    "{}:{}: skipped `{}`: {e}",
                    path.display(),
                    line.line,
                    line.smiles
                );
                skipped += 1;
            }
        }
    }
    Ok((ok, skipped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub name: String,
    pub low: f64,
    pub high: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub rows: usize,
    pub skipped: usize,
    pub columns: Vec<ColumnStats>,
    pub path: PathBuf,
}

/// Scores the corpus with every configured oracle, normalizes each column
/// and writes the score table.
pub fn preprocess(cfg: &RunConfig, out: Option<&Path>) -> Result<PreprocessSummary> {
    let (parsed, mut skipped) = parse_lines(&cfg.corpus)?;
    let mut rows = Vec::with_capacity(parsed.len());
    'mol: for (smi, mol) in parsed {
        let mut raw = Vec::with_capacity(cfg.properties.len());
        for p in &cfg.properties {
            match p.oracle.evaluate(&mol) {
                Ok(v) if v.is_finite() => raw.push(v),
                Ok(v) => {
                    warn!("skipped `{smi}`: {} = {v}", p.name);
                    skipped += 1;
                    continue 'mol;
                }
                Err(e) => {
                    warn!("skipped `{smi}`: {}: {e}", p.name);
                    skipped += 1;
                    continue 'mol;
                }
            }
        }
        rows.push((smi, raw));
    }
    if rows.is_empty() {
        return Err(Failure::usage(format!(
            "no usable molecules in {}",
            cfg.corpus.display()
        )));
    }
    let mut columns = Vec::new();
    for (k, p) in cfg.properties.iter().enumerate() {
        let raw: Vec<f64> = rows.iter().map(|r| r.1[k]).collect();
        let n = normalize_scores(&raw)?;
        if n.degenerate {
            warn!(
                "property `{}` has a degenerate range; its column is all zeros",
                p.name
            );
        }
        for (r, v) in rows.iter_mut().zip(n.values) {
            r.1[k] = v;
        }
        columns.push(ColumnStats {
            name: p.name.clone(),
            low: n.low,
            high: n.high,
            degenerate: n.degenerate,
        });
    }
    let table = ScoreTable {
        names: cfg.property_names(),
        rows,
    };
    let path = out.map_or_else(|| cfg.scores.clone(), Path::to_path_buf);
    create_parent(&path)?;
    fs::write(&path, table.to_tsv())?;
    info!("wrote {} rows to {}", table.rows.len(), path.display());
    Ok(PreprocessSummary {
        rows: table.rows.len(),
        skipped,
        columns,
        path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabSummary {
    pub labels: usize,
    pub molecules: usize,
    pub skipped: usize,
    pub path: PathBuf,
}

/// Builds the cluster vocabulary of the corpus. The file depends only on
/// the set of molecules, not their order.
pub fn vocab(cfg: &RunConfig, out: Option<&Path>) -> Result<VocabSummary> {
    let (parsed, mut skipped) = parse_lines(&cfg.corpus)?;
    let mut mols = Vec::with_capacity(parsed.len());
    for (smi, mol) in parsed {
        match decompose(&mol) {
            Ok(_) => mols.push(mol),
            Err(e) => {
                warn!("skipped `{smi}`: {e}");
                skipped += 1;
            }
        }
    }
    if mols.is_empty() {
        return Err(Failure::usage(format!(
            "no usable molecules in {}",
            cfg.corpus.display()
        )));
    }
    let v = build_vocabulary(&mols)?;
    let path = out.map_or_else(|| cfg.vocabulary.clone(), Path::to_path_buf);
    create_parent(&path)?;
    fs::write(&path, v.to_file_string())?;
    info!("wrote {} labels to {}", v.len(), path.display());
    Ok(VocabSummary {
        labels: v.len(),
        molecules: mols.len(),
        skipped,
        path,
    })
}

pub fn read_vocabulary(cfg: &RunConfig) -> Result<Vocabulary> {
    require(&cfg.vocabulary, "vocabulary")?;
    let text = fs::read_to_string(&cfg.vocabulary)?;
    Vocabulary::parse(&text).exit(EXIT_USAGE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    HeldOut,
}

/// Score-table molecules of one split, prepared against `vocab`.
/// Molecules that cannot be prepared are logged and counted.
pub fn load_split(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    split: Split,
) -> Result<(Vec<PreparedMolecule>, usize)> {
    require(&cfg.scores, "score table")?;
    let table = ScoreTable::read(&cfg.scores).exit(EXIT_USAGE)?;
    if table.names != cfg.property_names() {
        return Err(Failure::usage(format!(
            "score table columns {:?} do not match configured properties {:?}",
            table.names,
            cfg.property_names()
        )));
    }
    let mut out = Vec::new();
    let mut skipped = 0;
    for (smi, props) in table.rows {
        let mol = match parse_smiles(&smi) {
            Ok(m) => m,
            Err(e) => {
                warn!("skipped `{smi}`: {e}");
                skipped += 1;
                continue;
            }
        };
        if cfg.is_held_out(&write_smiles(&mol)) != (split == Split::HeldOut) {
            continue;
        }
        match PreparedMolecule::new(&smi, mol, vocab, props) {
            Ok(p) => out.push(p),
            Err(e) => {
                warn!("skipped `{smi}`: {e}");
                skipped += 1;
            }
        }
    }
    Ok((out, skipped))
}

fn effective_train_config(cfg: &RunConfig, seed: Option<u64>) -> Result<TrainConfig> {
    let mut tc = cfg.train.clone();
    if let Some(s) = seed {
        tc.seed = s;
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        tc.threads = v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{THREADS_ENV}: not a count: `{v}`")))?;
    }
    Ok(tc)
}

/// Loads a checkpoint and checks it against the vocabulary and model shape.
pub fn open_checkpoint(
    path: &Path,
    model_cfg: ModelConfig,
    vocab: &Vocabulary,
) -> Result<(Model, ParamStore)> {
    require(path, "checkpoint")?;
    let store = load_checkpoint(path)?;
    match store.meta(VOCAB_HASH_KEY) {
        Some(h) if h == vocab.content_hash() => {}
        Some(_) => {
            return Err(Failure::usage(format!(
                "{}: vocabulary hash does not match",
                path.display()
            )))
        }
        None => {
            return Err(Failure::usage(format!(
                "{}: no vocabulary hash",
                path.display()
            )))
        }
    }
    let model = Model::for_store(model_cfg, &store).map_err(|e| {
        Failure::usage(format!(
            "{}: does not match the configuration: {e}",
            path.display()
        ))
    })?;
    Ok((model, store))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StageSelection {
    #[default]
    All,
    Only(Stage),
}

impl StageSelection {
    fn includes(self, s: Stage) -> bool {
        self == StageSelection::All || self == StageSelection::Only(s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub stage: StageSelection,
    pub seed: Option<u64>,
    /// Checkpoint directory; the configured one when unset.
    pub checkpoints: Option<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{}.ckpt", stage.name()))
}

pub fn log_path(cfg: &RunConfig, stage: Stage) -> PathBuf {
    cfg.output.join(format!("{}.log.jsonl", stage.name()))
}

/// Appends step records to a stage log and checkpoints periodically.
struct StageSink {
    log: BufWriter<File>,
    checkpoint: PathBuf,
    every: u64,
}

impl StageSink {
    /// Opens the log for a stage resuming at `step`, dropping records of
    /// steps not covered by the checkpoint.
    fn open(log: &Path, checkpoint: &Path, step: u64, every: u64) -> Result<Self> {
        let mut kept = String::new();
        if log.exists() {
            for line in BufReader::new(File::open(log)?).lines().take(step as usize) {
                kept.push_str(&line?);
                kept.push('\n');
            }
        }
        fs::write(log, kept)?;
        let file = fs::OpenOptions::new().append(true).open(log)?;
        Ok(StageSink {
            log: BufWriter::new(file),
            checkpoint: checkpoint.to_path_buf(),
            every,
        })
    }

    fn save(&mut self, store: &ParamStore) -> std::io::Result<()> {
        self.log.flush()?;
        save_checkpoint(store, &self.checkpoint)
    }
}

impl TrainSink for StageSink {
    fn record(
        &mut self,
        rec: &StepRecord,
        store: &ParamStore,
    ) -> std::result::Result<Control, String> {
        let line = serde_json::to_string(rec).map_err(|e| e.to_string())?;
        writeln!(self.log, "{line}").map_err(|e| e.to_string())?;
        if (rec.step + 1).is_multiple_of(self.every) {
            self.save(store).map_err(|e| e.to_string())?;
        }
        Ok(Control::Continue)
    }
}

fn run_stage(
    cfg: &RunConfig,
    stage: Stage,
    store: &mut ParamStore,
    checkpoint: &Path,
    f: impl FnOnce(&mut ParamStore, &mut dyn TrainSink) -> cjtvae_core::training::Result<StageReport>,
) -> Result<StageReport> {
    let step = StageState::load(store, stage).step;
    if step > 0 {
        info!("{}: resuming at step {step}", stage.name());
    }
    let mut sink = StageSink::open(
        &log_path(cfg, stage),
        checkpoint,
        step,
        cfg.checkpoint_every,
    )?;
    match f(store, &mut sink) {
        Ok(report) => {
            sink.save(store)?;
            info!(
                "{}: {} steps ({} total){} in {:.1?}",
                stage.name(),
                report.steps_run,
                report.total_steps,
                if report.converged { ", converged" } else { "" },
                report.wall_clock
            );
            Ok(report)
        }
        Err(e) => {
            // keep the records; the last checkpoint stays as it was
            let _ = sink.log.flush();
            Err(train_failure(e))
        }
    }
}

/// Runs the selected training stages, resuming each from its checkpoint.
/// Checkpoints: `extractor.ckpt`, `vae.ckpt` and `joint.ckpt` (the final
/// model); logs: `<stage>.log.jsonl` in the output directory.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<Vec<StageReport>> {
    let tc = effective_train_config(cfg, opts.seed)?;
    let vocab = read_vocabulary(cfg)?;
    let (data, skipped) = load_split(cfg, &vocab, Split::Train)?;
    if data.is_empty() {
        return Err(Failure::usage("no usable training molecules"));
    }
    info!("training on {} molecules ({skipped} skipped)", data.len());
    let mc = tc.model_config(vocab.len());
    let (model, mut init) = Model::init(mc, tc.seed).map_err(model_failure)?;
    init.set_meta(VOCAB_HASH_KEY, vocab.content_hash());
    let trainer = Trainer::new(&model, &tc, &vocab, &data).map_err(train_failure)?;
    let dir = opts
        .checkpoints
        .clone()
        .unwrap_or_else(|| cfg.checkpoints.clone());
    fs::create_dir_all(&dir)?;
    fs::create_dir_all(&cfg.output)?;
    let resume = |path: &Path| -> Result<ParamStore> {
        if path.exists() {
            Ok(open_checkpoint(path, mc, &vocab)?.1)
        } else {
            Ok(init.clone())
        }
    };

    let mut reports = Vec::new();
    if opts.stage.includes(Stage::Extractor) {
        let path = checkpoint_path(&dir, Stage::Extractor);
        let mut store = resume(&path)?;
        reports.push(run_stage(
            cfg,
            Stage::Extractor,
            &mut store,
            &path,
            |s, sink| trainer.pretrain_extractor(s, sink),
        )?);
    }
    if opts.stage.includes(Stage::Vae) {
        let path = checkpoint_path(&dir, Stage::Vae);
        let mut store = resume(&path)?;
        reports.push(run_stage(cfg, Stage::Vae, &mut store, &path, |s, sink| {
            trainer.pretrain_vae(s, sink)
        })?);
    }
    if opts.stage.includes(Stage::Joint) {
        let (_, extractor) = open_checkpoint(&checkpoint_path(&dir, Stage::Extractor), mc, &vocab)?;
        let path = checkpoint_path(&dir, Stage::Joint);
        let start = if path.exists() {
            path.clone()
        } else {
            checkpoint_path(&dir, Stage::Vae)
        };
        let (_, mut store) = open_checkpoint(&start, mc, &vocab)?;
        reports.push(run_stage(
            cfg,
            Stage::Joint,
            &mut store,
            &path,
            |s, sink| trainer.joint_loop(s, &extractor, sink),
        )?);
    }
    Ok(reports)
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    /// Defaults to the joint checkpoint in the configured directory.
    pub checkpoint: Option<PathBuf>,
    /// SMILES file; the held-out split of the score table when unset.
    pub input: Option<PathBuf>,
    pub target_c: Vec<f64>,
    /// Record file; `generated.jsonl` in the output directory when unset.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub records: Vec<EvalRecord>,
    pub path: PathBuf,
}

fn scores(cfg: &RunConfig, mol: &MolGraph) -> Vec<Option<f64>> {
    cfg.properties
        .iter()
        .map(|p| p.oracle.evaluate(mol).ok().filter(|v| v.is_finite()))
        .collect()
}

/// Encodes each input, decodes it under the target property vector and
/// writes one record per input, failures included.
pub fn generate(cfg: &RunConfig, opts: &GenerateOptions) -> Result<GenerateSummary> {
    let d = cfg.properties.len();
    let c = &opts.target_c;
    if c.len() != d {
        return Err(Failure::usage(format!(
            "--target-c has {} entries, the model has {d} properties",
            c.len()
        )));
    }
    if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Failure::usage("--target-c entries must lie in [0, 1]"));
    }
    let vocab = read_vocabulary(cfg)?;
    let mc = cfg.train.model_config(vocab.len());
    let ckpt = opts
        .checkpoint
        .clone()
        .unwrap_or_else(|| checkpoint_path(&cfg.checkpoints, Stage::Joint));
    let (model, store) = open_checkpoint(&ckpt, mc, &vocab)?;

    let inputs: Vec<String> = match &opts.input {
        Some(p) => {
            require(p, "input")?;
            read_corpus(p)?.into_iter().map(|l| l.smiles).collect()
        }
        None => {
            require(&cfg.scores, "score table")?;
            let table = ScoreTable::read(&cfg.scores).exit(EXIT_USAGE)?;
            table
                .rows
                .into_iter()
                .map(|r| r.0)
                .filter(|s| parse_smiles(s).is_ok_and(|m| cfg.is_held_out(&write_smiles(&m))))
                .collect()
        }
    };
    if inputs.is_empty() {
        return Err(Failure::usage("no input molecules"));
    }

    let feasible = FeasibleLabels::complete(&vocab);
    let fp = cfg.fingerprint;
    let names = cfg.property_names();
    let mut records = Vec::with_capacity(inputs.len());
    for smi in inputs {
        let mut rec = EvalRecord {
            input: smi.clone(),
            output: None,
            status: Status::InvalidInput,
            target: c.clone(),
            similarity: None,
            properties: names.clone(),
            before: vec![None; d],
            after: vec![None; d],
            improvement: vec![None; d],
            tree_nodes: 0,
        };
        let prepared = parse_smiles(&smi).map_err(|e| e.to_string()).and_then(|m| {
            PreparedMolecule::new(&smi, m, &vocab, c.clone()).map_err(|e| e.to_string())
        });
        let prep = match prepared {
            Ok(p) => p,
            Err(e) => {
                warn!("`{smi}`: {e}");
                records.push(rec);
                continue;
            }
        };
        rec.before = scores(cfg, &prep.mol);
        let g = decode(&model, &store, &feasible, &prep, c, cfg.train.max_nodes)
            .map_err(model_failure)?;
        rec.status = g.status.into();
        rec.tree_nodes = g.tree_nodes;
        if let (Some(mol), Some(out)) = (g.mol, g.smiles) {
            let sim = tanimoto(
                &morgan_fingerprint(&prep.mol, fp.radius, fp.bits),
                &morgan_fingerprint(&mol, fp.radius, fp.bits),
            )?;
            rec.similarity = Some(sim);
            rec.after = scores(cfg, &mol);
            rec.improvement = rec
                .before
                .iter()
                .zip(&rec.after)
                .map(|(b, a)| Some(a.as_ref()? - b.as_ref()?))
                .collect();
            rec.output = Some(out);
        }
        records.push(rec);
    }

    let path = opts
        .out
        .clone()
        .unwrap_or_else(|| cfg.output.join("generated.jsonl"));
    create_parent(&path)?;
    let mut jsonl = String::new();
    let mut smi = String::new();
    for r in &records {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
        if let Some(o) = &r.output {
            smi.push_str(o);
            smi.push('\n');
        }
    }
    fs::write(&path, jsonl)?;
    fs::write(path.with_extension("smi"), smi)?;
    let ok = records.iter().filter(|r| r.output.is_some()).count();
    info!(
        "decoded {ok} of {} inputs into {}",
        records.len(),
        path.display()
    );
    Ok(GenerateSummary { records, path })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub property: String,
    pub similarity: f64,
    pub improvement: f64,
    /// Records contributing to the means.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    pub rows: Vec<SummaryRow>,
    pub records: usize,
    pub failed: usize,
    pub scatter: Vec<PathBuf>,
}

impl EvaluateSummary {
    /// `property, similarity, improvement` rows, three decimals.
    pub fn table(&self) -> String {
        let mut s = String::from("property, similarity, improvement\n");
        for r in &self.rows {
            writeln!(
                s,
                "{}, {:.3}, {:.3}",
                r.property, r.similarity, r.improvement
            )
            .expect("writing to a String");
        }
        s
    }
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    require(path, "records")?;
    let mut out = Vec::new();
    for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(line)
            .map_err(|e| Failure::usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

/// Mean similarity and improvement per property over the decoded records,
/// plus a similarity/improvement CSV per property (`out` itself when there
/// is one property, `<stem>_<property>.csv` otherwise).
pub fn evaluate(records_path: &Path, out: &Path) -> Result<EvaluateSummary> {
    let records = read_records(records_path)?;
    let Some(first) = records.first() else {
        return Err(Failure::usage(format!(
            "{}: no records",
            records_path.display()
        )));
    };
    let names = first.properties.clone();
    if records.iter().any(|r| r.properties != names) {
        return Err(Failure::usage("records disagree on the property list"));
    }
    let failed = records.iter().filter(|r| r.output.is_none()).count();
    if failed == records.len() {
        return Err(Failure::usage(format!(
            "{}: no decoded records",
            records_path.display()
        )));
    }
    create_parent(out)?;
    let mut rows = Vec::new();
    let mut scatter = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = records
            .iter()
            .filter_map(|r| Some((r.similarity?, r.improvement.get(k).copied().flatten()?)))
            .collect();
        let n = pairs.len();
        let mean = |f: fn(&(f64, f64)) -> f64| {
            if n == 0 {
                f64::NAN
            } else {
                pairs.iter().map(f).sum::<f64>() / n as f64
            }
        };
        rows.push(SummaryRow {
            property: name.clone(),
            similarity: mean(|p| p.0),
            improvement: mean(|p| p.1),
            n,
        });
        let path = if names.len() == 1 {
            out.to_path_buf()
        } else {
            let stem = out
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("scatter");
            out.with_file_name(format!("{stem}_{name}.csv"))
        };
        let mut csv = String::from("similarity,improvement\n");
        for (s, i) in &pairs {
            writeln!(csv, "{s},{i}").expect("writing to a String");
        }
        fs::write(&path, csv)?;
        scatter.push(path);
    }
    Ok(EvaluateSummary {
        rows,
        records: records.len(),
        failed,
        scatter,
    })
}

/// Gradient checks of every network on the first three training molecules
/// with freshly initialized parameters.
pub fn grad_check(cfg: &RunConfig, seed: Option<u64>, probes: usize) -> Result<Vec<NetworkCheck>> {
    let tc = effective_train_config(cfg, seed)?;
    let vocab = read_vocabulary(cfg)?;
    let (mut data, _) = load_split(cfg, &vocab, Split::Train)?;
    if data.is_empty() {
        return Err(Failure::usage("no usable training molecules"));
    }
    data.truncate(3);
    let (model, store) =
        Model::init(tc.model_config(vocab.len()), tc.seed).map_err(model_failure)?;
    check_networks(&model, &store, &vocab, &data, probes, tc.seed).map_err(train_failure)
}

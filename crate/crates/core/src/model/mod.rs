//! The networks: graph encoder, tree encoder, conditional tree decoder,
//! candidate scoring for the graph decoder, and the property extractor.
//!
//! All of them record onto a caller-owned [`Tape`]; parameters live in a
//! [`ParamStore`] under the prefixes in [`groups`].

mod decoder;
mod generate;
mod graph;
mod prepare;
mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::junctree::JunctreeError;
use crate::nn::{GaussianHead, GruParams, Init, NnError, ParamStore, Tape, Var};

pub use decoder::{
    decode_free, decode_teacher_forced, DecodeOutcome, DecoderTrace, FeasibleLabels, TraceStep,
};
pub use generate::{generate, DecodeStatus, Generated};
pub use graph::{atom_features, encode_graphs, GraphBatch, ATOM_FEATURES, BOND_FEATURES};
pub use prepare::{
    encode_molecule, score_candidates, vae_loss, LatentCode, LossBreakdown, PreparedMolecule,
    PreparedStep,
};
pub use tree::{encode_tree, extractor_forward, one_hot_rows, TreeEncoding, TreeInput};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Junctree(#[from] JunctreeError),
    #[error("vocabulary id {0} out of range")]
    UnknownLabel(usize),
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("property vector has {got} entries, model expects {want}")]
    PropertyDim { got: usize, want: usize },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Parameter-name prefixes. The encoder and decoder groups together form
/// the VAE; the extractor is trained separately and frozen afterwards.
pub mod groups {
    pub const GRAPH_ENCODER: &str = "genc.";
    pub const TREE_ENCODER: &str = "tenc.";
    pub const TREE_DECODER: &str = "dec.";
    pub const GRAPH_DECODER: &str = "gdec.";
    pub const EXTRACTOR: &str = "ext.";

    pub fn is_encoder(name: &str) -> bool {
        name.starts_with(GRAPH_ENCODER) || name.starts_with(TREE_ENCODER)
    }

    pub fn is_decoder(name: &str) -> bool {
        name.starts_with(TREE_DECODER) || name.starts_with(GRAPH_DECODER)
    }

    pub fn is_vae(name: &str) -> bool {
        is_encoder(name) || is_decoder(name)
    }

    pub fn is_extractor(name: &str) -> bool {
        name.starts_with(EXTRACTOR)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    /// Width of each latent block (tree and graph).
    pub latent: usize,
    /// Message-passing rounds of the graph encoder.
    pub depth: usize,
    pub prop_dim: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct GraphNames {
    pub w1: String,
    pub w2: String,
    pub w3: String,
    pub u1: String,
    pub u2: String,
    pub head: GaussianHead,
}

#[derive(Debug, Clone)]
pub(crate) struct TreeNames {
    pub emb: String,
    pub gru: GruParams,
    pub w_o: String,
    pub u_o: String,
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderNames {
    pub emb: String,
    pub gru: GruParams,
    pub topo_w1: String,
    pub topo_w2: String,
    pub topo_w3: String,
    pub topo_u: String,
    pub topo_b: String,
    pub label_w1: String,
    pub label_w2: String,
    pub label_u: String,
    pub label_b: String,
}

#[derive(Debug, Clone)]
pub(crate) struct Names {
    pub graph: GraphNames,
    pub tree: TreeNames,
    pub tree_head: GaussianHead,
    pub dec: DecoderNames,
    pub score_proj: String,
    pub ext: TreeNames,
    pub ext_w: String,
    pub ext_b: String,
}

/// Model architecture plus the names of its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub(crate) names: Names,
}

fn tree_names(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<TreeNames, NnError> {
    let h = cfg.hidden;
    let n = TreeNames {
        emb: format!("{prefix}emb"),
        gru: GruParams::register(store, &format!("{prefix}gru"), h, h, rng)?,
        w_o: format!("{prefix}w_o"),
        u_o: format!("{prefix}u_o"),
    };
    store.register(&n.emb, vec![cfg.vocab_size, h], Init::Glorot, rng)?;
    store.register(&n.w_o, vec![h, h], Init::Glorot, rng)?;
    store.register(&n.u_o, vec![h, h], Init::Glorot, rng)?;
    Ok(n)
}

impl Model {
    /// Registers every parameter in a fresh store, initialized from `seed`.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<(Model, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Self::register(cfg, &mut store, &mut rng)?;
        Ok((model, store))
    }

    fn register(cfg: ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Model> {
        use groups::*;
        let (h, l, d) = (cfg.hidden, cfg.latent, cfg.prop_dim);
        let g = |s: &str| format!("{GRAPH_ENCODER}{s}");
        let (w1, w2, w3, u1, u2) = (g("w1"), g("w2"), g("w3"), g("u1"), g("u2"));
        store.register(&w1, vec![h, ATOM_FEATURES], Init::Glorot, rng)?;
        store.register(&w2, vec![h, BOND_FEATURES], Init::Glorot, rng)?;
        store.register(&w3, vec![h, h], Init::Glorot, rng)?;
        store.register(&u1, vec![h, ATOM_FEATURES], Init::Glorot, rng)?;
        store.register(&u2, vec![h, h], Init::Glorot, rng)?;
        let head = GaussianHead::register(store, &g("head"), h, l, rng)?;
        let graph = GraphNames {
            w1,
            w2,
            w3,
            u1,
            u2,
            head,
        };

        let tree = tree_names(store, TREE_ENCODER, &cfg, rng)?;
        let tree_head = GaussianHead::register(store, &format!("{TREE_ENCODER}head"), h, l, rng)?;

        let dn = |s: &str| format!("{TREE_DECODER}{s}");
        let dec = DecoderNames {
            emb: dn("emb"),
            gru: GruParams::register(store, &dn("gru"), h, h, rng)?,
            topo_w1: dn("topo_w1"),
            topo_w2: dn("topo_w2"),
            topo_w3: dn("topo_w3"),
            topo_u: dn("topo_u"),
            topo_b: dn("topo_b"),
            label_w1: dn("label_w1"),
            label_w2: dn("label_w2"),
            label_u: dn("label_u"),
            label_b: dn("label_b"),
        };
        store.register(&dec.emb, vec![cfg.vocab_size, h], Init::Glorot, rng)?;
        store.register(&dec.topo_w1, vec![h, h], Init::Glorot, rng)?;
        store.register(&dec.topo_w2, vec![h, l + d], Init::Glorot, rng)?;
        store.register(&dec.topo_w3, vec![h, h], Init::Glorot, rng)?;
        store.register(&dec.topo_u, vec![1, h], Init::Glorot, rng)?;
        store.register(&dec.topo_b, vec![1], Init::Zeros, rng)?;
        store.register(&dec.label_w1, vec![h, l + d], Init::Glorot, rng)?;
        store.register(&dec.label_w2, vec![h, h], Init::Glorot, rng)?;
        store.register(&dec.label_u, vec![cfg.vocab_size, h], Init::Glorot, rng)?;
        store.register(&dec.label_b, vec![cfg.vocab_size], Init::Zeros, rng)?;

        let score_proj = format!("{GRAPH_DECODER}proj");
        store.register(&score_proj, vec![h, l + d], Init::Glorot, rng)?;

        let ext = tree_names(store, EXTRACTOR, &cfg, rng)?;
        let ext_w = format!("{EXTRACTOR}w_c");
        let ext_b = format!("{EXTRACTOR}b_c");
        store.register(&ext_w, vec![d, h], Init::Zeros, rng)?;
        store.register(&ext_b, vec![d], Init::Zeros, rng)?;

        Ok(Model {
            cfg,
            names: Names {
                graph,
                tree,
                tree_head,
                dec,
                score_proj,
                ext,
                ext_w,
                ext_b,
            },
        })
    }

    /// Rebuilds the name table for `cfg` and checks that `store` holds every
    /// parameter with the expected shape.
    pub fn for_store(cfg: ModelConfig, store: &ParamStore) -> Result<Model> {
        let (model, reference) = Self::init(cfg, 0)?;
        for (id, name) in reference.names().iter().enumerate() {
            let have = store.get(name)?;
            if have.shape() != reference.tensor(id).shape() {
                return Err(NnError::ShapeMismatch {
                    op: "checkpoint",
                    lhs: have.matrix_dims(),
                    rhs: reference.tensor(id).matrix_dims(),
                }
                .into());
            }
        }
        Ok(model)
    }

    pub(crate) fn check_props(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.cfg.prop_dim {
            return Err(ModelError::PropertyDim {
                got: c.len(),
                want: self.cfg.prop_dim,
            });
        }
        Ok(())
    }

    /// `[z, c]` as a `1 x (latent + d)` row.
    pub(crate) fn condition(&self, tape: &mut Tape<'_>, z: Var, c: &[f64]) -> Result<Var> {
        self.check_props(c)?;
        let c = tape.constant(1, c.len(), c.to_vec())?;
        Ok(tape.concat(&[z, c])?)
    }
}

#[cfg(test)]
mod tests;

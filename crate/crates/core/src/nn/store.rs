use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{NnError, Result, Tensor};

/// Initial values for a newly registered parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`, dims taken as `(out, in)`.
    Glorot,
    Uniform(f32),
}

/// Named parameters with Adam moments, per-parameter step counts and
/// integer metadata. Names are unique and iteration follows registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    tensors: Vec<Tensor>,
    moment1: Vec<Vec<f32>>,
    moment2: Vec<Vec<f32>>,
    adam_t: Vec<u64>,
    meta: BTreeMap<String, u64>,
    probe: Option<(usize, usize, f64)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        let mut t = Tensor::zeros(shape);
        match init {
            Init::Zeros => {}
            Init::Glorot => {
                let (out, inp) = t.matrix_dims();
                let a = (6.0 / (out + inp) as f64).sqrt() as f32;
                t.data_mut()
                    .iter_mut()
                    .for_each(|x| *x = rng.random_range(-a..a));
            }
            Init::Uniform(a) => {
                t.data_mut()
                    .iter_mut()
                    .for_each(|x| *x = rng.random_range(-a..a));
            }
        }
        self.insert(name, t)
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let id = self.names.len();
        self.moment1.push(vec![0.0; t.len()]);
        self.moment2.push(vec![0.0; t.len()]);
        self.adam_t.push(0);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.tensors.push(t);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.tensors[self.id(name)?])
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn moments(&self, id: usize) -> (&[f32], &[f32]) {
        (&self.moment1[id], &self.moment2[id])
    }

    pub(crate) fn moments_mut(&mut self, id: usize) -> (&mut Vec<f32>, &mut Vec<f32>) {
        (&mut self.moment1[id], &mut self.moment2[id])
    }

    /// Number of Adam updates applied to parameter `id`.
    pub fn adam_steps(&self, id: usize) -> u64 {
        self.adam_t[id]
    }

    pub(crate) fn set_adam_steps(&mut self, id: usize, t: u64) {
        self.adam_t[id] = t;
    }

    pub fn set_meta(&mut self, key: &str, value: u64) {
        self.meta.insert(key.to_string(), value);
    }

    pub fn meta(&self, key: &str) -> Option<u64> {
        self.meta.get(key).copied()
    }

    pub fn meta_entries(&self) -> &BTreeMap<String, u64> {
        &self.meta
    }

    /// Parameter values widened to `f64`, with the active probe applied.
    pub fn values_f64(&self, id: usize) -> Vec<f64> {
        let mut v: Vec<f64> = self.tensors[id].data().iter().map(|&x| x as f64).collect();
        if let Some((pid, elem, val)) = self.probe {
            if pid == id {
                v[elem] = val;
            }
        }
        v
    }

    /// Overrides one scalar in `f64` for the next forward passes; used by
    /// the gradient checker so probes are not rounded to `f32`.
    pub fn set_probe(&mut self, probe: Option<(usize, usize, f64)>) {
        self.probe = probe;
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Copies every parameter (values and Adam state) whose name starts with
    /// `prefix` from `other`.
    pub fn copy_group_from(&mut self, other: &ParamStore, prefix: &str) -> Result<()> {
        for (id, name) in other.names.iter().enumerate() {
            if name.starts_with(prefix) {
                let mine = self.id(name)?;
                self.tensors[mine] = other.tensors[id].clone();
                self.moment1[mine] = other.moment1[id].clone();
                self.moment2[mine] = other.moment2[id].clone();
                self.adam_t[mine] = other.adam_t[id];
            }
        }
        Ok(())
    }
}

/// Per-parameter gradient buffers, indexed like the store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads {
    pub(crate) bufs: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn empty(n_params: usize) -> Self {
        Grads {
            bufs: vec![None; n_params],
        }
    }

    pub fn get(&self, id: usize) -> Option<&[f64]> {
        self.bufs.get(id).and_then(|b| b.as_deref())
    }

    pub fn accumulate(&mut self, id: usize, g: &[f64]) {
        if self.bufs.len() <= id {
            self.bufs.resize(id + 1, None);
        }
        match &mut self.bufs[id] {
            Some(b) => b.iter_mut().zip(g).for_each(|(a, x)| *a += x),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn merge(&mut self, other: &Grads) {
        for (id, b) in other.bufs.iter().enumerate() {
            if let Some(b) = b {
                self.accumulate(id, b);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for b in self.bufs.iter_mut().flatten() {
            b.iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Makes sure every parameter selected by `select` has a buffer,
    /// zero-filled when nothing flowed into it.
    pub fn fill_zeros(&mut self, store: &ParamStore, select: impl Fn(&str) -> bool) {
        self.bufs.resize(store.len(), None);
        for id in 0..store.len() {
            if select(store.name(id)) && self.bufs[id].is_none() {
                self.bufs[id] = Some(vec![0.0; store.tensor(id).len()]);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bufs
            .iter()
            .flatten()
            .all(|b| b.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter accepted by `select`;
/// the gradients are consumed. Each selected parameter must have a gradient
/// buffer (see [`Grads::fill_zeros`]).
pub fn adam_step(
    store: &mut ParamStore,
    grads: Grads,
    cfg: &AdamConfig,
    select: impl Fn(&str) -> bool,
) -> Result<()> {
    let selected: Vec<usize> = (0..store.len())
        .filter(|&id| select(store.name(id)))
        .collect();
    for &id in &selected {
        if grads.get(id).is_none() {
            return Err(NnError::MissingGradient(store.name(id).to_string()));
        }
    }
    if !grads.is_finite() {
        return Err(NnError::NumericFault("gradient".into()));
    }
    for &id in &selected {
        store.adam_t[id] += 1;
        let t = store.adam_t[id].min(i32::MAX as u64) as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let g = grads.get(id).expect("checked above");
        let mut m = std::mem::take(store.moments_mut(id).0);
        let mut v = std::mem::take(store.moments_mut(id).1);
        let w = store.tensor_mut(id).data_mut();
        for k in 0..w.len() {
            let mk = cfg.beta1 * m[k] as f64 + (1.0 - cfg.beta1) * g[k];
            let vk = cfg.beta2 * v[k] as f64 + (1.0 - cfg.beta2) * g[k] * g[k];
            m[k] = mk as f32;
            v[k] = vk as f32;
            let upd = cfg.lr * (mk / c1) / ((vk / c2).sqrt() + cfg.eps);
            w[k] = (w[k] as f64 - upd) as f32;
        }
        let ok = w.iter().all(|x| x.is_finite());
        let (m1, m2) = store.moments_mut(id);
        *m1 = m;
        *m2 = v;
        if !ok {
            return Err(NnError::NumericFault(format!(
                "update of `{}`",
                store.name(id)
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn scalar_store(w: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![1], vec![w]).unwrap())
            .unwrap();
        s
    }

    fn grad(g: f64) -> Grads {
        let mut gr = Grads::empty(1);
        gr.accumulate(0, &[g]);
        gr
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = scalar_store(0.7);
        adam_step(&mut s, grad(0.0), &AdamConfig::default(), |_| true).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.01] {
            let mut s = scalar_store(1.0);
            let cfg = AdamConfig {
                lr: 0.01,
                ..Default::default()
            };
            adam_step(&mut s, grad(g), &cfg, |_| true).unwrap();
            let moved = s.get("w").unwrap().data()[0] as f64 - 1.0;
            assert!((moved + 0.01 * g.signum()).abs() < 1e-5, "{moved}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = scalar_store(1.0);
        let cfg = AdamConfig {
            lr: 0.05,
            ..Default::default()
        };
        for _ in 0..200 {
            let w = s.get("w").unwrap().data()[0] as f64;
            adam_step(&mut s, grad(2.0 * w), &cfg, |_| true).unwrap();
        }
        assert!(s.get("w").unwrap().data()[0].abs() < 1e-2);
    }

    #[test]
    fn missing_gradient_and_duplicates() {
        let mut s = scalar_store(1.0);
        let err = adam_step(&mut s, Grads::empty(1), &AdamConfig::default(), |_| true);
        assert_eq!(err, Err(NnError::MissingGradient("w".into())));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(s.register("w", vec![2], Init::Zeros, &mut rng).is_err());
        let mut g = Grads::empty(1);
        g.fill_zeros(&s, |_| true);
        adam_step(&mut s, g, &AdamConfig::default(), |_| true).unwrap();
    }

    #[test]
    fn glorot_is_bounded_and_seeded() {
        let mk = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = ParamStore::new();
            s.register("a", vec![8, 4], Init::Glorot, &mut rng).unwrap();
            s
        };
        let a = mk(1);
        assert_eq!(a, mk(1));
        assert_ne!(a, mk(2));
        let bound = (6.0f32 / 12.0).sqrt();
        assert!(a.get("a").unwrap().data().iter().all(|x| x.abs() <= bound));
    }
}

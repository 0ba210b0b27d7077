use std::collections::VecDeque;

use super::Stage;
use crate::nn::ParamStore;

/// Progress of one stage, persisted in the store's metadata so a stage
/// resumes exactly where its last checkpoint left it.
#[derive(Debug, Clone, PartialEq)]
pub struct StageState {
    pub step: u64,
    pub converged: bool,
    /// Best evaluation before the current window.
    best_before: f64,
    recent: VecDeque<f64>,
    evals: u64,
    /// Running sum and count of batch losses since the last evaluation.
    acc: f64,
    acc_n: u64,
}

impl Default for StageState {
    fn default() -> Self {
        StageState {
            step: 0,
            converged: false,
            best_before: f64::INFINITY,
            recent: VecDeque::new(),
            evals: 0,
            acc: 0.0,
            acc_n: 0,
        }
    }
}

impl StageState {
    pub fn load(store: &ParamStore, stage: Stage) -> Self {
        let key = |k: &str| format!("{}.{k}", stage.name());
        let f = |k: &str| store.meta(&key(k)).map(f64::from_bits);
        let Some(step) = store.meta(&key("step")) else {
            return Self::default();
        };
        let n = store.meta(&key("recent_n")).unwrap_or(0);
        StageState {
            step,
            converged: store.meta(&key("converged")) == Some(1),
            best_before: f("best").unwrap_or(f64::INFINITY),
            recent: (0..n)
                .filter_map(|i| f(&format!("recent.{i:02}")))
                .collect(),
            evals: store.meta(&key("evals")).unwrap_or(0),
            acc: f("acc").unwrap_or(0.0),
            acc_n: store.meta(&key("acc_n")).unwrap_or(0),
        }
    }

    pub fn save(&self, store: &mut ParamStore, stage: Stage) {
        let key = |k: &str| format!("{}.{k}", stage.name());
        store.set_meta(&key("step"), self.step);
        store.set_meta(&key("converged"), self.converged as u64);
        store.set_meta(&key("best"), self.best_before.to_bits());
        store.set_meta(&key("recent_n"), self.recent.len() as u64);
        for (i, v) in self.recent.iter().enumerate() {
            store.set_meta(&key(&format!("recent.{i:02}")), v.to_bits());
        }
        store.set_meta(&key("evals"), self.evals);
        store.set_meta(&key("acc"), self.acc.to_bits());
        store.set_meta(&key("acc_n"), self.acc_n);
    }

    pub(crate) fn accumulate(&mut self, loss: f64) {
        self.acc += loss;
        self.acc_n += 1;
    }

    /// Mean batch loss since the last call.
    pub(crate) fn take_mean(&mut self) -> f64 {
        let m = if self.acc_n == 0 {
            0.0
        } else {
            self.acc / self.acc_n as f64
        };
        self.acc = 0.0;
        self.acc_n = 0;
        m
    }

    /// Records an evaluation. Converged once the best value inside the last
    /// `window` evaluations improves on everything before it by a relative
    /// margin below `tol`, or the value is exactly zero.
    pub(crate) fn push_eval(&mut self, value: f64, window: usize, tol: f64) -> bool {
        self.evals += 1;
        if window == 0 {
            return false;
        }
        if value == 0.0 {
            self.converged = true;
            return true;
        }
        if self.recent.len() == window {
            let old = self.recent.pop_front().expect("window is non-empty");
            self.best_before = self.best_before.min(old);
        }
        self.recent.push_back(value);
        if self.best_before.is_finite() {
            let best_recent = self.recent.iter().copied().fold(f64::INFINITY, f64::min);
            let rel = (self.best_before - best_recent) / self.best_before.abs().max(1e-12);
            if rel < tol {
                self.converged = true;
            }
        }
        self.converged
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_converges_and_progress_does_not() {
        let mut s = StageState::default();
        for i in 0..30 {
            assert!(!s.push_eval(1.0 / (1.0 + i as f64), 10, 1e-4));
        }
        let mut s = StageState::default();
        let hits: Vec<bool> = (0..12).map(|_| s.push_eval(0.5, 10, 1e-4)).collect();
        assert_eq!(hits.iter().position(|&h| h), Some(10));
    }

    #[test]
    fn zero_loss_converges_immediately() {
        let mut s = StageState::default();
        assert!(s.push_eval(0.0, 10, 1e-4));
    }

    #[test]
    fn round_trips_through_metadata() {
        let mut s = StageState::default();
        for v in [0.9, 0.8, 0.75] {
            s.push_eval(v, 2, 1e-4);
        }
        s.accumulate(0.3);
        s.step = 41;
        let mut store = ParamStore::new();
        s.save(&mut store, Stage::Vae);
        assert_eq!(StageState::load(&store, Stage::Vae), s);
        assert_eq!(
            StageState::load(&store, Stage::Joint),
            StageState::default()
        );
    }
}

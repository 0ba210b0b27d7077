use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Grads, ParamStore, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, element, autodiff, finite difference)` per probe.
    pub probes: Vec<(String, usize, f64, f64)>,
}

fn rel_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-8)
}

/// Compares autodiff gradients against central differences at
/// `n_probes` scalar parameters drawn uniformly from those accepted by
/// `select`. `f` returns the loss and its gradients for the current store
/// and must be deterministic.
///
/// The step is `h = 1e-3 * max(|w|, 0.1)`, applied in `f64` through the
/// store's probe override. A probe straddling a ReLU kink is retried with
/// `h / 10` and `h / 100`; the smallest error is kept.
pub fn grad_check<F>(
    store: &mut ParamStore,
    n_probes: usize,
    seed: u64,
    select: impl Fn(&str) -> bool,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Grads)>,
{
    let (_, grads) = f(store)?;
    let ids: Vec<usize> = (0..store.len())
        .filter(|&id| select(store.name(id)))
        .collect();
    let total: usize = ids.iter().map(|&id| store.tensor(id).len()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: Vec::with_capacity(n_probes),
    };
    if total == 0 {
        return Ok(report);
    }
    for _ in 0..n_probes {
        let mut k = rng.random_range(0..total);
        let mut pick = (ids[0], 0);
        for &id in &ids {
            let n = store.tensor(id).len();
            if k < n {
                pick = (id, k);
                break;
            }
            k -= n;
        }
        let (id, elem) = pick;
        let w = store.tensor(id).data()[elem] as f64;
        let a = grads.get(id).map_or(0.0, |g| g[elem]);
        let mut best = (f64::INFINITY, 0.0);
        let mut h = 1e-3 * w.abs().max(0.1);
        for _ in 0..3 {
            store.set_probe(Some((id, elem, w + h)));
            let plus = f(store).map(|r| r.0);
            store.set_probe(Some((id, elem, w - h)));
            let minus = f(store).map(|r| r.0);
            store.set_probe(None);
            let fd = (plus? - minus?) / (2.0 * h);
            let e = rel_error(a, fd);
            if e < best.0 {
                best = (e, fd);
            }
            if best.0 <= 1e-6 {
                break;
            }
            h /= 10.0;
        }
        report.max_rel_error = report.max_rel_error.max(best.0);
        report
            .probes
            .push((store.name(id).to_string(), elem, a, best.1));
    }
    Ok(report)
}

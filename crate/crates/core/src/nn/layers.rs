use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Init, ParamStore, Result, Tape, Var};

/// Log-variances are clamped to `±LOG_VAR_CLAMP` before use.
pub const LOG_VAR_CLAMP: f64 = 20.0;

/// Parameter names of one set-GRU.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_z: String,
    pub b_z: String,
    pub w_r: String,
    pub u_r: String,
    pub b_r: String,
    pub w_h: String,
    pub b_h: String,
    pub hidden: usize,
}

impl GruParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let n = |s: &str| format!("{prefix}.{s}");
        let p = GruParams {
            w_z: n("w_z"),
            b_z: n("b_z"),
            w_r: n("w_r"),
            u_r: n("u_r"),
            b_r: n("b_r"),
            w_h: n("w_h"),
            b_h: n("b_h"),
            hidden,
        };
        store.register(&p.w_z, vec![hidden, input + hidden], Init::Glorot, rng)?;
        store.register(&p.b_z, vec![hidden], Init::Zeros, rng)?;
        store.register(&p.w_r, vec![hidden, input], Init::Glorot, rng)?;
        store.register(&p.u_r, vec![hidden, hidden], Init::Glorot, rng)?;
        store.register(&p.b_r, vec![hidden], Init::Zeros, rng)?;
        store.register(&p.w_h, vec![hidden, input + hidden], Init::Glorot, rng)?;
        store.register(&p.b_h, vec![hidden], Init::Zeros, rng)?;
        Ok(p)
    }
}

/// Set-GRU over a message set, `x: 1 x input`, `msgs: k x hidden` (`None`
/// is a single zero message):
///
/// ```text
/// s   = sum_k m_k
/// z   = sigmoid(W_z [x, s] + b_z)
/// r_k = sigmoid(W_r x + U_r m_k + b_r)
/// h~  = tanh(W_h [x, sum_k r_k * m_k] + b_h)
/// out = (1 - z) * s + z * h~
/// ```
pub fn gru_cell(tape: &mut Tape<'_>, p: &GruParams, x: Var, msgs: Option<Var>) -> Result<Var> {
    let msgs = match msgs {
        Some(m) => m,
        None => tape.zeros(1, p.hidden),
    };
    let s = tape.sum_rows(msgs);
    let xs = tape.concat(&[x, s])?;
    let (w_z, b_z) = (tape.param(&p.w_z)?, tape.param(&p.b_z)?);
    let z = tape.linear(xs, w_z)?;
    let z = tape.add_row(z, b_z)?;
    let z = tape.sigmoid(z);

    let (w_r, u_r, b_r) = (
        tape.param(&p.w_r)?,
        tape.param(&p.u_r)?,
        tape.param(&p.b_r)?,
    );
    let rx = tape.linear(x, w_r)?;
    let rx = tape.add(rx, b_r)?;
    let rm = tape.linear(msgs, u_r)?;
    let r = tape.add_row(rm, rx)?;
    let r = tape.sigmoid(r);
    let gated = tape.mul(r, msgs)?;
    let gated = tape.sum_rows(gated);

    let xg = tape.concat(&[x, gated])?;
    let (w_h, b_h) = (tape.param(&p.w_h)?, tape.param(&p.b_h)?);
    let h = tape.linear(xg, w_h)?;
    let h = tape.add_row(h, b_h)?;
    let h = tape.tanh(h);

    let keep = tape.affine(z, -1.0, 1.0);
    let a = tape.mul(keep, s)?;
    let b = tape.mul(z, h)?;
    tape.add(a, b)
}

/// Mean and log-variance projections for one latent block.
#[derive(Debug, Clone)]
pub struct GaussianHead {
    pub w_mean: String,
    pub b_mean: String,
    pub w_logvar: String,
    pub b_logvar: String,
    pub latent: usize,
}

impl GaussianHead {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        latent: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let n = |s: &str| format!("{prefix}.{s}");
        let h = GaussianHead {
            w_mean: n("w_mean"),
            b_mean: n("b_mean"),
            w_logvar: n("w_logvar"),
            b_logvar: n("b_logvar"),
            latent,
        };
        store.register(&h.w_mean, vec![latent, input], Init::Glorot, rng)?;
        store.register(&h.b_mean, vec![latent], Init::Zeros, rng)?;
        store.register(&h.w_logvar, vec![latent, input], Init::Glorot, rng)?;
        store.register(&h.b_logvar, vec![latent], Init::Zeros, rng)?;
        Ok(h)
    }

    /// `(mean, clamped log-variance)`, each `1 x latent`.
    pub fn forward(&self, tape: &mut Tape<'_>, h: Var) -> Result<(Var, Var)> {
        let (wm, bm) = (tape.param(&self.w_mean)?, tape.param(&self.b_mean)?);
        let mean = tape.linear(h, wm)?;
        let mean = tape.add_row(mean, bm)?;
        let (wl, bl) = (tape.param(&self.w_logvar)?, tape.param(&self.b_logvar)?);
        let lv = tape.linear(h, wl)?;
        let lv = tape.add_row(lv, bl)?;
        let lv = tape.clamp(lv, -LOG_VAR_CLAMP, LOG_VAR_CLAMP);
        Ok((mean, lv))
    }
}

/// `mean + exp(log_var / 2) * eps` with `eps ~ N(0, I)` drawn from `rng`;
/// the noise is a constant on the tape.
pub fn reparameterize(
    tape: &mut Tape<'_>,
    mean: Var,
    log_var: Var,
    rng: &mut impl Rng,
) -> Result<Var> {
    let (n, m) = tape.shape(mean);
    let eps: Vec<f64> = (0..n * m).map(|_| rng.sample(StandardNormal)).collect();
    let eps = tape.constant(n, m, eps)?;
    let sd = tape.affine(log_var, 0.5, 0.0);
    let sd = tape.exp(sd);
    let noise = tape.mul(sd, eps)?;
    tape.add(mean, noise)
}

/// `0.5 * sum(exp(log_var) + mean^2 - 1 - log_var)` as a `1 x 1` value.
pub fn kl_standard_normal(tape: &mut Tape<'_>, mean: Var, log_var: Var) -> Result<Var> {
    let var = tape.exp(log_var);
    let sq = tape.mul(mean, mean)?;
    let a = tape.add(var, sq)?;
    let a = tape.sub(a, log_var)?;
    let a = tape.affine(a, 1.0, -1.0);
    let s = tape.sum(a);
    Ok(tape.scale(s, 0.5))
}

/// Plain evaluation of [`kl_standard_normal`].
pub fn kl_value(mean: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(log_var)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand::SeedableRng;

    #[test]
    fn kl_closed_forms() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let m = t.zeros(1, 4);
        let lv = t.zeros(1, 4);
        let k = kl_standard_normal(&mut t, m, lv).unwrap();
        assert_eq!(t.scalar(k), 0.0);
        let m = t.constant(1, 1, vec![1.0]).unwrap();
        let lv = t.zeros(1, 1);
        let k = kl_standard_normal(&mut t, m, lv).unwrap();
        assert_eq!(t.scalar(k), 0.5);
        assert_eq!(kl_value(&[1.0], &[0.0]), 0.5);
    }

    #[test]
    fn reparameterize_collapses_and_is_seeded() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let m = t.constant(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let lv = t.constant(1, 3, vec![-40.0; 3]).unwrap();
        let lv = t.clamp(lv, -LOG_VAR_CLAMP, LOG_VAR_CLAMP);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = reparameterize(&mut t, m, lv, &mut rng).unwrap();
        for (a, b) in t.value(z).iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b).abs() < 1e-3);
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let lv0 = t.zeros(1, 3);
        let z1 = reparameterize(&mut t, m, lv0, &mut r1).unwrap();
        let z2 = reparameterize(&mut t, m, lv0, &mut r2).unwrap();
        assert_eq!(t.value(z1), t.value(z2));
    }

    #[test]
    fn gru_zero_weights_give_zero() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GruParams::register(&mut s, "g", 3, 4, &mut rng).unwrap();
        for id in 0..s.len() {
            let shape = s.tensor(id).shape().to_vec();
            *s.tensor_mut(id) = Tensor::zeros(shape);
        }
        let mut t = Tape::new(&s);
        let x = t.zeros(1, 3);
        let out = gru_cell(&mut t, &p, x, None).unwrap();
        assert!(t.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_is_message_order_invariant() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GruParams::register(&mut s, "g", 2, 3, &mut rng).unwrap();
        let mut t = Tape::new(&s);
        let x = t.constant(1, 2, vec![0.3, -0.7]).unwrap();
        let m1 = t
            .constant(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6])
            .unwrap();
        let m2 = t
            .constant(2, 3, vec![-0.4, 0.5, 0.6, 0.1, 0.2, 0.3])
            .unwrap();
        let a = gru_cell(&mut t, &p, x, Some(m1)).unwrap();
        let b = gru_cell(&mut t, &p, x, Some(m2)).unwrap();
        for (u, v) in t.value(a).iter().zip(t.value(b)) {
            assert!((u - v).abs() < 1e-15);
        }
    }
}

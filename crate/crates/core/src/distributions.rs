//! Diagonal Gaussians and pixelwise Bernoulli likelihoods.
//!
//! Every density in the model is a diagonal Gaussian parameterised by a mean
//! and a per-dimension log-variance. Each closed form comes in two flavours:
//! plain `f64` functions on [`DiagGaussian`] for evaluation, and batched tape
//! versions on [`GaussianVars`] (one distribution per row) for training.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, LN_2PI, LN_2PI_E};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Bounds applied to every log-variance.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Smooth map of the real line onto `(LOG_VAR_MIN, LOG_VAR_MAX)`,
/// `10·tanh(v/10)` written as `20·σ(v/5) − 10`. Close to the identity near 0.
pub fn squash_log_var(v: f64) -> f64 {
    20.0 * math::sigmoid(v * 0.2) + -10.0
}

fn dim_err(op: &'static str, a: usize, b: usize) -> TensorError {
    TensorError::Shape {
        op,
        lhs: vec![a],
        rhs: vec![b],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl DiagGaussian {
    /// Log-variances are clamped into `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self, TensorError> {
        if mean.len() != log_var.len() {
            return Err(dim_err("diag_gaussian", mean.len(), log_var.len()));
        }
        let log_var = log_var
            .into_iter()
            .map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
            .collect();
        Ok(Self { mean, log_var })
    }

    pub fn standard(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            log_var: vec![0.0; n],
        }
    }

    /// Splits a network head `[mean | log_var]` of width `2n`.
    pub fn from_head(head: &[f64]) -> Result<Self, TensorError> {
        if head.len() % 2 != 0 {
            return Err(dim_err("diag_gaussian_head", head.len(), head.len() + 1));
        }
        let n = head.len() / 2;
        Self::new(head[..n].to_vec(), head[n..].to_vec())
    }

    /// Like [`from_head`](Self::from_head) but maps the raw log-variance
    /// through [`squash_log_var`], which keeps a nonzero gradient everywhere.
    pub fn from_squashed_head(head: &[f64]) -> Result<Self, TensorError> {
        if head.len() % 2 != 0 {
            return Err(dim_err("diag_gaussian_head", head.len(), head.len() + 1));
        }
        let n = head.len() / 2;
        let log_var = head[n..].iter().map(|&v| squash_log_var(v)).collect();
        Self::new(head[..n].to_vec(), log_var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|&v| math::exp(v)).collect()
    }

    pub fn sample_reparam(&self, eps: &[f64]) -> Result<Vec<f64>, TensorError> {
        sample_reparam(self, eps)
    }

    pub fn kl_divergence(&self, p: &DiagGaussian) -> Result<f64, TensorError> {
        kl_diag(self, p)
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64, TensorError> {
        log_prob(self, x)
    }
}

/// `mean + exp(log_var / 2) ⊙ eps`.
pub fn sample_reparam(g: &DiagGaussian, eps: &[f64]) -> Result<Vec<f64>, TensorError> {
    if eps.len() != g.dim() {
        return Err(dim_err("sample_reparam", g.dim(), eps.len()));
    }
    Ok(g.mean
        .iter()
        .zip(&g.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + math::exp(0.5 * lv) * e)
        .collect())
}

/// `KL(q ‖ p)` between diagonal Gaussians.
pub fn kl_diag(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64, TensorError> {
    if q.dim() != p.dim() {
        return Err(dim_err("kl_diag", q.dim(), p.dim()));
    }
    let mut s = 0.0;
    for i in 0..q.dim() {
        let d_lv = q.log_var[i] - p.log_var[i];
        let dm = p.mean[i] - q.mean[i];
        s += math::exp(d_lv) + dm * dm * math::exp(-p.log_var[i]) - d_lv - 1.0;
    }
    Ok(0.5 * s)
}

/// Differential entropy `½ Σ (ln 2πe + log_var)`.
pub fn entropy(g: &DiagGaussian) -> f64 {
    0.5 * g.log_var.iter().map(|lv| LN_2PI_E + lv).sum::<f64>()
}

/// Log-density at `x`.
pub fn log_prob(g: &DiagGaussian, x: &[f64]) -> Result<f64, TensorError> {
    if x.len() != g.dim() {
        return Err(dim_err("log_prob", g.dim(), x.len()));
    }
    let mut s = 0.0;
    for i in 0..g.dim() {
        let d = x[i] - g.mean[i];
        s += LN_2PI + g.log_var[i] + d * d * math::exp(-g.log_var[i]);
    }
    Ok(-0.5 * s)
}

fn check_targets(targets: &[f64]) -> Result<(), TensorError> {
    if targets.iter().all(|t| (0.0..=1.0).contains(t)) {
        Ok(())
    } else {
        Err(TensorError::Domain {
            op: "bernoulli_log_likelihood",
        })
    }
}

/// `Σ t·ln σ(l) + (1−t)·ln(1−σ(l))`, computed as `Σ t·l − softplus(l)`.
pub fn bernoulli_log_likelihood(logits: &[f64], targets: &[f64]) -> Result<f64, TensorError> {
    if logits.len() != targets.len() {
        return Err(dim_err(
            "bernoulli_log_likelihood",
            logits.len(),
            targets.len(),
        ));
    }
    check_targets(targets)?;
    Ok(logits
        .iter()
        .zip(targets)
        .map(|(&l, &t)| t * l - math::softplus(l))
        .sum())
}

/// A batch of diagonal Gaussians on the tape: row `i` of `mean` and
/// `log_var` (both `m×n`) describes sample `i`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mean: Var,
    pub log_var: Var,
}

impl GaussianVars {
    /// Splits an `m×2n` head into mean and clamped log-variance.
    pub fn from_head(tape: &mut Tape, head: Var, n: usize) -> Result<Self, TensorError> {
        let mean = tape.slice_cols(head, 0, n)?;
        let raw = tape.slice_cols(head, n, n)?;
        let log_var = tape.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX);
        Ok(Self { mean, log_var })
    }

    /// Splits an `m×2n` head, squashing the log-variance with the same
    /// operations as [`squash_log_var`].
    pub fn from_squashed_head(tape: &mut Tape, head: Var, n: usize) -> Result<Self, TensorError> {
        let mean = tape.slice_cols(head, 0, n)?;
        let raw = tape.slice_cols(head, n, n)?;
        let scaled = tape.scale(raw, 0.2);
        let s = tape.sigmoid(scaled);
        let s = tape.scale(s, 20.0);
        let log_var = tape.offset(s, -10.0);
        Ok(Self { mean, log_var })
    }

    /// Reads row `i` back as a plain distribution.
    pub fn row(&self, tape: &Tape, i: usize) -> DiagGaussian {
        DiagGaussian {
            mean: tape.value(self.mean).row_slice(i).to_vec(),
            log_var: tape.value(self.log_var).row_slice(i).to_vec(),
        }
    }

    pub fn sample_reparam(&self, tape: &mut Tape, eps: Var) -> Result<Var, TensorError> {
        let half = tape.scale(self.log_var, 0.5);
        let sd = tape.exp(half);
        let noise = tape.mul(sd, eps)?;
        tape.add(self.mean, noise)
    }

    /// Per-row `KL(self ‖ p)` as an `m×1` column.
    pub fn kl_diag(&self, tape: &mut Tape, p: &GaussianVars) -> Result<Var, TensorError> {
        let d_lv = tape.sub(self.log_var, p.log_var)?;
        let ratio = tape.exp(d_lv);
        let dm = tape.sub(p.mean, self.mean)?;
        let dm2 = tape.mul(dm, dm)?;
        let neg_lvp = tape.neg(p.log_var);
        let inv_var_p = tape.exp(neg_lvp);
        let maha = tape.mul(dm2, inv_var_p)?;
        let s = tape.add(ratio, maha)?;
        let s = tape.sub(s, d_lv)?;
        let s = tape.offset(s, -1.0);
        let rows = tape.row_sum(s)?;
        Ok(tape.scale(rows, 0.5))
    }

    /// Per-row entropy as an `m×1` column.
    pub fn entropy(&self, tape: &mut Tape) -> Result<Var, TensorError> {
        let n = tape.value(self.log_var).cols() as f64;
        let rows = tape.row_sum(self.log_var)?;
        let half = tape.scale(rows, 0.5);
        Ok(tape.offset(half, 0.5 * n * LN_2PI_E))
    }

    /// Per-row log-density of the rows of `x` as an `m×1` column.
    pub fn log_prob(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let d = tape.sub(x, self.mean)?;
        let d2 = tape.mul(d, d)?;
        let neg_lv = tape.neg(self.log_var);
        let inv_var = tape.exp(neg_lv);
        let maha = tape.mul(d2, inv_var)?;
        let s = tape.add(maha, self.log_var)?;
        let s = tape.offset(s, LN_2PI);
        let rows = tape.row_sum(s)?;
        Ok(tape.scale(rows, -0.5))
    }
}

/// Per-row Bernoulli log-likelihood of constant `targets` under `logits`.
pub fn bernoulli_log_likelihood_rows(
    tape: &mut Tape,
    logits: Var,
    targets: Var,
) -> Result<Var, TensorError> {
    check_targets(tape.value(targets).data())?;
    let tl = tape.mul(targets, logits)?;
    let sp = tape.softplus(logits);
    let ll = tape.sub(tl, sp)?;
    tape.row_sum(ll)
}

/// Convenience: a constant `1×n` row on the tape.
pub fn row_constant(tape: &mut Tape, v: &[f64]) -> Var {
    tape.constant(&Tensor::row(v.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{LN_2, PI};

    fn g(mean: &[f64], log_var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), log_var.to_vec()).unwrap()
    }

    #[test]
    fn zero_noise_sample_is_mean() {
        let d = g(&[1.0, -2.0], &[0.3, -0.7]);
        assert_eq!(d.sample_reparam(&[0.0, 0.0]).unwrap(), d.mean());
    }

    #[test]
    fn unit_sigma_sample_is_eps() {
        let d = DiagGaussian::standard(2);
        assert_eq!(d.sample_reparam(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn sample_length_mismatch() {
        assert!(DiagGaussian::standard(2).sample_reparam(&[1.0]).is_err());
    }

    #[test]
    fn log_var_is_clamped() {
        let d = g(&[0.0, 0.0], &[-50.0, 50.0]);
        assert_eq!(d.log_var(), &[LOG_VAR_MIN, LOG_VAR_MAX]);
    }

    #[test]
    fn kl_reference_values() {
        let q = g(&[0.2, -1.0], &[0.5, -0.3]);
        assert!(kl_diag(&q, &q).unwrap().abs() < 1e-15);
        let kl = kl_diag(&g(&[1.0], &[0.0]), &g(&[0.0], &[0.0])).unwrap();
        assert!((kl - 0.5).abs() < 1e-15);
        assert!(kl_diag(&q, &DiagGaussian::standard(3)).is_err());
    }

    #[test]
    fn entropy_reference_values() {
        let h = entropy(&DiagGaussian::standard(1));
        assert!((h - 0.5 * (2.0 * PI * core::f64::consts::E).ln()).abs() < 1e-15);
        assert!((h - 1.418_938_533_204_672_7).abs() < 1e-12);
        // σ -> 2σ in two dimensions adds 2 ln 2
        let a = g(&[0.0, 0.0], &[0.1, -0.4]);
        let b = g(&[0.0, 0.0], &[0.1 + 4.0f64.ln(), -0.4 + 4.0f64.ln()]);
        assert!((entropy(&b) - entropy(&a) - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn log_prob_reference_values() {
        let d = DiagGaussian::standard(1);
        assert!((log_prob(&d, &[0.0]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let lp = log_prob(&d, &[k as f64 * 0.25]).unwrap();
            assert!(lp < last);
            last = lp;
        }
        assert!(log_prob(&d, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn log_prob_integrates_to_one() {
        let d = g(&[0.7], &[(0.6f64 * 0.6).ln()]);
        // trapezoid over ±12σ
        let (lo, hi, n) = (0.7 - 7.2, 0.7 + 7.2, 20_000);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * log_prob(&d, &[x]).unwrap().exp();
        }
        assert!((total * h - 1.0).abs() < 1e-4);
    }

    #[test]
    fn bernoulli_reference_values() {
        let zeros = vec![0.0; 1600];
        let targets: Vec<f64> = (0..1600).map(|i| (i % 3) as f64 / 2.0).collect();
        let ll = bernoulli_log_likelihood(&zeros, &targets).unwrap();
        assert!((ll + 1600.0 * LN_2).abs() < 1e-9);

        let sat = bernoulli_log_likelihood(&[20.0], &[1.0]).unwrap();
        assert!(sat <= 0.0 && (sat + (-20f64).exp()).abs() < 1e-13);

        assert!(bernoulli_log_likelihood(&[0.0], &[1.5]).is_err());
        assert!(bernoulli_log_likelihood(&[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn bernoulli_matches_naive_formula() {
        let logits = [-4.5, -1.2, 0.0, 0.3, 2.2, 4.9];
        let targets = [0.0, 1.0, 0.5, 0.25, 1.0, 0.0];
        let naive: f64 = logits
            .iter()
            .zip(&targets)
            .map(|(&l, &t)| {
                let p = 1.0 / (1.0 + (-l as f64).exp());
                t * p.ln() + (1.0 - t) * (1.0 - p).ln()
            })
            .sum();
        let stable = bernoulli_log_likelihood(&logits, &targets).unwrap();
        assert!((naive - stable).abs() < 1e-10);
    }

    #[test]
    fn tape_versions_agree_with_plain() {
        let q = g(&[0.3, -0.8], &[0.4, -1.1]);
        let p = g(&[-0.2, 0.5], &[-0.3, 0.9]);
        let x = [0.9, -0.1];
        let mut tape = Tape::new();
        let qh = tape.constant(&Tensor::row([q.mean(), q.log_var()].concat()));
        let ph = tape.constant(&Tensor::row([p.mean(), p.log_var()].concat()));
        let qv = GaussianVars::from_head(&mut tape, qh, 2).unwrap();
        let pv = GaussianVars::from_head(&mut tape, ph, 2).unwrap();
        let kl = qv.kl_diag(&mut tape, &pv).unwrap();
        let h = qv.entropy(&mut tape).unwrap();
        let xv = row_constant(&mut tape, &x);
        let lp = qv.log_prob(&mut tape, xv).unwrap();
        let eps = row_constant(&mut tape, &[0.5, -2.0]);
        let s = qv.sample_reparam(&mut tape, eps).unwrap();

        assert!((tape.value(kl).data()[0] - kl_diag(&q, &p).unwrap()).abs() < 1e-14);
        assert!((tape.value(h).data()[0] - entropy(&q)).abs() < 1e-14);
        assert!((tape.value(lp).data()[0] - log_prob(&q, &x).unwrap()).abs() < 1e-14);
        let plain = q.sample_reparam(&[0.5, -2.0]).unwrap();
        for (a, b) in tape.value(s).data().iter().zip(&plain) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

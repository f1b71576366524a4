//! Ordinal label-distribution losses on cumulative distributions, with
//! analytic gradients through a softmax parameterization.
//!
//! All losses compare a predicted distribution `P` against a target `Q`:
//!
//! ```text
//! CAD(P, Q) = Σₙ |F_P(n) − F_Q(n)|
//! CJS(P, Q) = Σₙ JS(Bern(F_P(n)) ‖ Bern(F_Q(n)))     (base-2 logs)
//! MAE(P, Q) = (1/C) Σᵢ |pᵢ − qᵢ|
//! CE(P, Q)  = −Σᵢ qᵢ log pᵢ
//! ```
//!
//! where `F` is the CDF over the ordered classes. CAD is the 1-D Wasserstein
//! distance on a unit-spaced scale.

use serde::{Deserialize, Serialize};

use crate::data::Distribution;
use crate::error::{Error, Result};

/// Clip applied to CDF values before taking logarithms.
pub const CDF_EPS: f64 = 1e-12;

/// Cumulative sums of a distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct CdfVector(Vec<f64>);

impl CdfVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

fn prefix_sums(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

pub fn cdf(p: &Distribution) -> CdfVector {
    CdfVector(prefix_sums(p.probs()))
}

fn check_dims(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(())
}

fn cad_raw(p: &[f64], q: &[f64]) -> f64 {
    prefix_sums(p)
        .iter()
        .zip(prefix_sums(q))
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// Cumulative absolute distance.
pub fn cad(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_dims(p.probs(), q.probs())?;
    Ok(cad_raw(p.probs(), q.probs()))
}

fn xlog2x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

/// Binary entropy in bits.
fn h2(x: f64) -> f64 {
    -(xlog2x(x) + xlog2x(1.0 - x))
}

/// JS divergence (bits) between Bernoulli(a) and Bernoulli(b), inputs clipped.
fn bernoulli_js(a: f64, b: f64) -> f64 {
    let a = a.clamp(CDF_EPS, 1.0 - CDF_EPS);
    let b = b.clamp(CDF_EPS, 1.0 - CDF_EPS);
    let m = 0.5 * (a + b);
    // Entropy form can dip a few ulps below zero.
    (h2(m) - 0.5 * (h2(a) + h2(b))).max(0.0)
}

/// ∂JS(Bern(a) ‖ Bern(b))/∂a.
fn bernoulli_js_grad_a(a: f64, b: f64) -> f64 {
    let a = a.clamp(CDF_EPS, 1.0 - CDF_EPS);
    let b = b.clamp(CDF_EPS, 1.0 - CDF_EPS);
    let m = 0.5 * (a + b);
    // dH(x)/dx = log2((1 − x)/x); dJS/da = ½H'(m) − ½H'(a)
    0.5 * (((1.0 - m) / m).log2() - ((1.0 - a) / a).log2())
}

fn cjs_raw(p: &[f64], q: &[f64]) -> f64 {
    prefix_sums(p)
        .iter()
        .zip(prefix_sums(q))
        .map(|(a, b)| bernoulli_js(*a, b))
        .sum()
}

/// Cumulative Jensen–Shannon divergence, in bits.
///
/// Each CDF coordinate is read as a Bernoulli distribution `(F, 1 − F)`.
pub fn cjs(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_dims(p.probs(), q.probs())?;
    Ok(cjs_raw(p.probs(), q.probs()))
}

fn mae_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64
}

pub fn mae(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_dims(p.probs(), q.probs())?;
    Ok(mae_raw(p.probs(), q.probs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Cjs,
    Cad,
    Mae,
    CrossEntropy,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Cjs, LossKind::Cad, LossKind::Mae, LossKind::CrossEntropy];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Cjs => "cjs",
            LossKind::Cad => "cad",
            LossKind::Mae => "mae",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cjs" => Ok(LossKind::Cjs),
            "cad" | "wasserstein" => Ok(LossKind::Cad),
            "mae" => Ok(LossKind::Mae),
            "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValueWithGrad {
    pub value: f64,
    /// ∂value/∂logits.
    pub grad: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pulls a gradient w.r.t. probabilities back through softmax:
/// `g_z = p ⊙ (g_p − ⟨p, g_p⟩)`.
pub(crate) fn softmax_backward(p: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(grad_p).map(|(a, b)| a * b).sum();
    p.iter().zip(grad_p).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// `∂Σₙ f(F_P(n))/∂pᵢ = Σ_{n≥i} f'(F_P(n))`: suffix sums of per-coordinate
/// CDF derivatives.
fn cdf_backward(grad_cdf: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grad_cdf.len()];
    let mut acc = 0.0;
    for i in (0..grad_cdf.len()).rev() {
        acc += grad_cdf[i];
        out[i] = acc;
    }
    out
}

/// Loss of `softmax(logits)` against `target` with its gradient w.r.t. the
/// logits. Absolute-value kinks use subgradient 0.
pub fn loss_with_grad(kind: LossKind, logits: &[f64], target: &[f64]) -> Result<LossValueWithGrad> {
    check_dims(logits, target)?;
    if let Some(z) = logits.iter().find(|z| !z.is_finite()) {
        return Err(Error::NonFinite(format!("logit {z}")));
    }
    let p = softmax(logits);
    let (value, grad) = match kind {
        LossKind::CrossEntropy => {
            let logp = log_softmax(logits);
            let value = -target
                .iter()
                .zip(&logp)
                .filter(|(q, _)| **q > 0.0)
                .map(|(q, lp)| q * lp)
                .sum::<f64>();
            let q_total: f64 = target.iter().sum();
            let grad = p.iter().zip(target).map(|(pi, qi)| q_total * pi - qi).collect();
            (value, grad)
        }
        LossKind::Mae => {
            let c = p.len() as f64;
            let grad_p: Vec<f64> = p.iter().zip(target).map(|(a, b)| sign(a - b) / c).collect();
            (mae_raw(&p, target), softmax_backward(&p, &grad_p))
        }
        LossKind::Cad => {
            let fp = prefix_sums(&p);
            let fq = prefix_sums(target);
            let grad_cdf: Vec<f64> = fp.iter().zip(&fq).map(|(a, b)| sign(a - b)).collect();
            let grad_p = cdf_backward(&grad_cdf);
            (cad_raw(&p, target), softmax_backward(&p, &grad_p))
        }
        LossKind::Cjs => {
            let fp = prefix_sums(&p);
            let fq = prefix_sums(target);
            let grad_cdf: Vec<f64> = fp
                .iter()
                .zip(&fq)
                .map(|(a, b)| bernoulli_js_grad_a(*a, *b))
                .collect();
            let grad_p = cdf_backward(&grad_cdf);
            (cjs_raw(&p, target), softmax_backward(&p, &grad_p))
        }
    };
    Ok(LossValueWithGrad { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(cdf(&d(&[1.0, 0.0, 0.0])).values(), &[1.0, 1.0, 1.0]);
        assert_eq!(cdf(&d(&[0.25, 0.25, 0.5])).values(), &[0.25, 0.5, 1.0]);
        assert_eq!(cdf(&Distribution::uniform(4)).values(), &[0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn cad_examples() {
        let p = d(&[0.1, 0.6, 0.3]);
        assert_eq!(cad(&p, &p).unwrap(), 0.0);
        assert_eq!(cad(&d(&[1.0, 0.0, 0.0]), &d(&[0.0, 0.0, 1.0])).unwrap(), 2.0);
        assert!(cad(&p, &d(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn cjs_examples() {
        let p = d(&[0.1, 0.6, 0.3]);
        assert_eq!(cjs(&p, &p).unwrap(), 0.0);
        let v = cjs(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{v}");
        let q = d(&[0.3, 0.3, 0.4]);
        assert_eq!(cjs(&p, &q).unwrap(), cjs(&q, &p).unwrap());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&d(&[0.5, 0.5]), &d(&[0.5, 0.5])).unwrap(), 0.0);
        assert_eq!(mae(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap(), 0.5);
    }

    #[test]
    fn cad_at_minimum_has_zero_grad() {
        let logits = [0.3, -1.2, 0.8, 0.1];
        let target = softmax(&logits);
        let out = loss_with_grad(LossKind::Cad, &logits, &target).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn cross_entropy_one_hot() {
        let logits = [1.0, 2.0, -0.5];
        let out = loss_with_grad(LossKind::CrossEntropy, &logits, &[0.0, 1.0, 0.0]).unwrap();
        let expected = -softmax(&logits)[1].ln();
        assert!((out.value - expected).abs() < 1e-12);
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(matches!(
            loss_with_grad(LossKind::Cjs, &[f64::NAN, 0.0], &[0.5, 0.5]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn loss_kind_parses() {
        assert_eq!("CAD".parse::<LossKind>().unwrap(), LossKind::Cad);
        assert_eq!("cross-entropy".parse::<LossKind>().unwrap(), LossKind::CrossEntropy);
        assert!("hinge".parse::<LossKind>().is_err());
    }
}

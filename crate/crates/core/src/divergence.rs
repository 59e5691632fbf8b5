//! Exact arithmetic on finite categorical distributions.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Tolerance on `Σp = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Probability vector over `0..n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Categorical(Vec<f64>);

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Invalid("categorical over an empty support".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Invalid(format!("negative or non-finite probability in {probs:?}")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Invalid(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self(probs))
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Invalid(format!("weights sum to {s}")));
        }
        Self::new(weights.iter().map(|w| w / s).collect())
    }

    /// Softmax of log-weights with max-shift stabilization.
    pub fn from_log_weights(logw: &[f64]) -> Result<Self> {
        let lse = log_sum_exp(logw);
        if !lse.is_finite() {
            return Err(Error::Invalid("log-weights do not normalize".into()));
        }
        let mut p: Vec<f64> = logw.iter().map(|l| (l - lse).exp()).collect();
        // absorb the last few ulps of rounding so Σp = 1 holds tightly
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        Self::new(p)
    }

    pub fn one_hot(n: usize, i: usize) -> Self {
        let mut p = vec![0.0; n];
        p[i] = 1.0;
        Self(p)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Shannon entropy (nats) with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// KL divergence value. A support violation (`p > 0` where `q = 0`) is
/// reported as [`Kl::Infinite`] rather than a NaN or a panic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kl {
    Finite(f64),
    Infinite,
}

impl Kl {
    pub fn value(self) -> f64 {
        match self {
            Kl::Finite(v) => v,
            Kl::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Kl::Finite(_))
    }
}

fn check_support(p: &Categorical, q: &Categorical, op: &'static str) -> Result<()> {
    if p.len() != q.len() {
        return Err(shape_err(op, format!("support sizes {} and {}", p.len(), q.len())));
    }
    Ok(())
}

/// `Σ p log(p/q)` with `0 log(0/·) = 0`.
pub fn kl(p: &Categorical, q: &Categorical) -> Result<Kl> {
    check_support(p, q, "kl")?;
    let mut acc = 0.0;
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(Kl::Infinite);
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(Kl::Finite(acc))
}

/// Half the L1 distance.
pub fn tv(p: &Categorical, q: &Categorical) -> Result<f64> {
    check_support(p, q, "tv")?;
    let l1: f64 = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * l1).min(1.0))
}

/// Per-horizon weights: `w_k = 1` for `k < c`, `w_c = 1/(1-γ)`, and the
/// normalizer `w̄ = Σ_k γ^(k-1) w_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub w: Vec<f64>,
    pub w_bar: f64,
    pub gamma: f64,
}

impl Weights {
    pub fn c(&self) -> usize {
        self.w.len()
    }

    /// `γ^(k-1) w_k` for `k` in `1..=c`.
    pub fn discounted(&self, k: usize) -> f64 {
        self.gamma.powi(k as i32 - 1) * self.w[k - 1]
    }

    /// `γ^(k-1) w_k / w̄`; these sum to one over `k`.
    pub fn normalized(&self, k: usize) -> f64 {
        self.discounted(k) / self.w_bar
    }
}

pub fn weights(c: usize, gamma: f64) -> Result<Weights> {
    if c == 0 {
        return Err(Error::Invalid("c must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Invalid(format!("gamma {gamma} outside [0, 1)")));
    }
    let mut w = vec![1.0; c];
    w[c - 1] = 1.0 / (1.0 - gamma);
    let w_bar = (1..=c).map(|k| gamma.powi(k as i32 - 1) * w[k - 1]).sum();
    Ok(Weights { w, w_bar, gamma })
}

/// `(1/w̄) Σ_k γ^(k-1) w_k divs[k-1]`.
pub fn weighted_divergence_sum(divs: &[f64], weights: &Weights) -> Result<f64> {
    if divs.len() != weights.c() {
        return Err(shape_err(
            "weighted_divergence_sum",
            format!("{} divergences for c = {}", divs.len(), weights.c()),
        ));
    }
    let s: f64 = divs
        .iter()
        .enumerate()
        .map(|(i, d)| weights.discounted(i + 1) * d)
        .sum();
    Ok(s / weights.w_bar)
}

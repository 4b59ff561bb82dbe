//! The exponential strength law `sigma = sigma_ref * exp(alpha . M)` with
//! `sigma_ref = 1`: least-squares fitting in log space, prediction,
//! normalization to `[0, 1]`, and the domain-knowledge hooks used by stage 2.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Sample, N_MINKOWSKI};
use crate::nnet::Matrix;

/// `exp` of anything larger overflows to infinity.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("fitting needs at least {N_MINKOWSKI} samples, got {0}")]
    TooFew(usize),
    #[error("non-positive strength for samples {0:?}; the log is undefined")]
    NonPositive(Vec<String>),
    #[error("normal matrix is rank deficient; rescale the Minkowski features or regularize")]
    RankDeficient,
    #[error("alpha . m = {0} exceeds {MAX_EXPONENT}; the predicted strength overflows")]
    Overflow(f64),
    #[error("{0}")]
    Shape(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Sum of squared log-space residuals over the fitting set.
    pub sse: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthLaw {
    pub alpha: [f64; N_MINKOWSKI],
    pub sigma_ref: f64,
    pub norm_min: f64,
    pub norm_max: f64,
    pub fit_diagnostics: FitDiagnostics,
}

/// Maximum stress over the grid; 0 for an empty curve.
pub fn peak_stress(curve: &[f64]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    curve.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cholesky solve of the symmetric positive definite system `a x = b`.
fn cholesky_solve(a: &[[f64; N_MINKOWSKI]; N_MINKOWSKI], b: &[f64; N_MINKOWSKI]) -> Result<[f64; N_MINKOWSKI], LawError> {
    const N: usize = N_MINKOWSKI;
    let scale = (0..N).map(|i| a[i][i]).fold(0.0, f64::max);
    let mut l = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..=i {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 1e-13 * scale) {
                    return Err(LawError::RankDeficient);
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0; N];
    for i in 0..N {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0; N];
    for i in (0..N).rev() {
        x[i] = (y[i] - (i + 1..N).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Ok(x)
}

impl StrengthLaw {
    /// The law with `alpha = 0`, bounds `[0, 0]`.
    pub fn zero() -> Self {
        Self {
            alpha: [0.0; N_MINKOWSKI],
            sigma_ref: 1.0,
            norm_min: 0.0,
            norm_max: 0.0,
            fit_diagnostics: FitDiagnostics { sse: 0.0, n: 0 },
        }
    }

    /// Least-squares fit of `alpha . M_i = ln sigma_i` (no intercept) through
    /// the normal equations, with one step of iterative refinement. `labels`
    /// name rows in errors; row indices are used when it is `None`.
    pub fn fit(minkowski: &Matrix, strengths: &[f64], labels: Option<&[String]>) -> Result<Self, LawError> {
        let n = minkowski.rows();
        if minkowski.cols() != N_MINKOWSKI || strengths.len() != n {
            return Err(LawError::Shape(format!(
                "fit needs an n x {N_MINKOWSKI} matrix and n strengths, got {}x{} and {}",
                n,
                minkowski.cols(),
                strengths.len()
            )));
        }
        if n < N_MINKOWSKI {
            return Err(LawError::TooFew(n));
        }
        let bad: Vec<String> = strengths
            .iter()
            .enumerate()
            .filter(|(_, s)| !(**s > 0.0) || !s.is_finite())
            .map(|(i, _)| labels.map_or_else(|| format!("#{i}"), |l| l[i].clone()))
            .collect();
        if !bad.is_empty() {
            return Err(LawError::NonPositive(bad));
        }
        let y: Vec<f64> = strengths.iter().map(|s| s.ln()).collect();

        let mut gram = [[0.0; N_MINKOWSKI]; N_MINKOWSKI];
        for r in 0..n {
            let m = minkowski.row(r);
            for i in 0..N_MINKOWSKI {
                for j in 0..N_MINKOWSKI {
                    gram[i][j] += m[i] * m[j];
                }
            }
        }
        let moment = |resid: &dyn Fn(usize) -> f64| -> [f64; N_MINKOWSKI] {
            let mut b = [0.0; N_MINKOWSKI];
            for r in 0..n {
                let m = minkowski.row(r);
                let e = resid(r);
                for (bi, mi) in b.iter_mut().zip(m) {
                    *bi += mi * e;
                }
            }
            b
        };
        let mut alpha = cholesky_solve(&gram, &moment(&|r| y[r]))?;
        let correction = cholesky_solve(&gram, &moment(&|r| y[r] - dot(minkowski.row(r), &alpha)))?;
        for (a, c) in alpha.iter_mut().zip(correction) {
            *a += c;
        }

        let fitted: Vec<f64> = (0..n).map(|r| dot(minkowski.row(r), &alpha)).collect();
        let sse = fitted.iter().zip(&y).map(|(f, t)| (f - t) * (f - t)).sum();
        Ok(Self {
            alpha,
            sigma_ref: 1.0,
            norm_min: fitted.iter().copied().fold(f64::INFINITY, f64::min),
            norm_max: fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            fit_diagnostics: FitDiagnostics { sse, n },
        })
    }

    /// Fits on the samples' peak stresses.
    pub fn fit_samples(samples: &[Sample]) -> Result<Self, LawError> {
        let m = Matrix::from_vec(
            samples.len(),
            N_MINKOWSKI,
            samples.iter().flat_map(|s| s.minkowski).collect(),
        )
        .map_err(|e| LawError::Shape(e.to_string()))?;
        let peaks: Vec<f64> = samples.iter().map(|s| peak_stress(&s.stress)).collect();
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        Self::fit(&m, &peaks, Some(&ids))
    }

    /// `ln sigma = ln sigma_ref + alpha . m`.
    pub fn log_predict(&self, m: &[f64; N_MINKOWSKI]) -> f64 {
        self.sigma_ref.ln() + dot(&self.alpha, m)
    }

    pub fn predict(&self, m: &[f64; N_MINKOWSKI]) -> Result<f64, LawError> {
        let z = self.log_predict(m);
        if !z.is_finite() || z > MAX_EXPONENT {
            return Err(LawError::Overflow(z));
        }
        Ok(z.exp())
    }

    /// `(ln sigma - norm_min) / (norm_max - norm_min)` clamped to `[0, 1]`;
    /// 0.5 when the bounds coincide. The flag is set when the value was
    /// clamped or `sigma` is not positive (which maps to 0).
    pub fn normalize_strength(&self, sigma: f64) -> (f64, bool) {
        if !(sigma > 0.0) {
            return (0.0, true);
        }
        let span = self.norm_max - self.norm_min;
        if !(span > 0.0) {
            return (0.5, false);
        }
        let v = (sigma.ln() - self.norm_min) / span;
        if v < 0.0 {
            (0.0, true)
        } else if v > 1.0 {
            (1.0, true)
        } else {
            (v, false)
        }
    }

    /// `x` with the normalized peak stress of `curve` appended.
    pub fn augment_features(&self, x: &[f64], curve: &[f64]) -> (Vec<f64>, bool) {
        let (v, flagged) = self.normalize_strength(peak_stress(curve));
        let mut out = Vec::with_capacity(x.len() + 1);
        out.extend_from_slice(x);
        out.push(v);
        (out, flagged)
    }

    /// `(alpha . m_hat - ln peak)^2` and its gradient with respect to `m_hat`.
    pub fn consistency_loss(&self, m_hat: &[f64; N_MINKOWSKI], curve: &[f64]) -> Result<(f64, [f64; N_MINKOWSKI]), LawError> {
        let peak = peak_stress(curve);
        if !(peak > 0.0) {
            return Err(LawError::NonPositive(vec!["curve".into()]));
        }
        let r = self.log_predict(m_hat) - peak.ln();
        Ok((r * r, self.alpha.map(|a| 2.0 * r * a)))
    }

    /// Weights and per-row offsets that express the consistency residual of
    /// standardized predictions `z` (with `m_hat = mean + std * z`) as
    /// `z . weights + offset_i`.
    pub fn standardized_consistency(
        &self,
        target_mean: &[f64],
        target_std: &[f64],
        log_peaks: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let weights: Vec<f64> = self.alpha.iter().zip(target_std).map(|(a, s)| a * s).collect();
        let base = self.sigma_ref.ln() + dot(&self.alpha, target_mean);
        let offsets = log_peaks.iter().map(|lp| base - lp).collect();
        (weights, offsets)
    }
}

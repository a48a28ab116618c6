use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// A named collection of parameter tensors.
pub trait TensorSet: Clone {
    fn tensors(&self) -> &[Matrix];
    fn tensors_mut(&mut self) -> &mut [Matrix];
    fn tensor_name(&self, index: usize) -> String;
}

impl TensorSet for Vec<Matrix> {
    fn tensors(&self) -> &[Matrix] {
        self
    }

    fn tensors_mut(&mut self) -> &mut [Matrix] {
        self
    }

    fn tensor_name(&self, index: usize) -> String {
        format!("tensor{index}")
    }
}

/// Central-difference stencil used for the numeric derivative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+ε) − f(x−ε)) / 2ε`
    #[default]
    ThreePoint,
    /// `(−f(x+2ε) + 8f(x+ε) − 8f(x−ε) + f(x−2ε)) / 12ε`; its error is
    /// fourth order in ε, so a larger ε keeps cancellation error small.
    FivePoint,
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub stencil: Stencil,
    pub tolerance: f64,
    /// Check at most this many entries per tensor (sampled); `None` checks all.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            stencil: Stencil::ThreePoint,
            tolerance: 1e-4,
            max_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    /// (entry index, analytic, numeric) of the worst entry.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.failures == 0)
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with central differences, entry by entry.
///
/// `loss_and_grad` supplies the value and tape gradient at the base point;
/// `loss` is re-evaluated at each perturbed point.
pub fn grad_check<P, L, G>(
    loss: L,
    loss_and_grad: G,
    params: &P,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    P: TensorSet,
    L: Fn(&P) -> Result<f64>,
    G: Fn(&P) -> Result<(f64, Vec<Matrix>)>,
{
    if !(config.epsilon > 0.0 && config.epsilon <= 1e-2) {
        return Err(Error::Domain(format!(
            "grad_check epsilon {} outside (0, 1e-2]",
            config.epsilon
        )));
    }
    let first = loss(params)?;
    let second = loss(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }

    let (_, analytic) = loss_and_grad(params)?;
    if analytic.len() != params.tensors().len() {
        return Err(Error::Consistency(format!(
            "{} gradient tensors for {} parameters",
            analytic.len(),
            params.tensors().len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = params.clone();
    let mut tensors = Vec::with_capacity(analytic.len());
    let mut overall: f64 = 0.0;

    for (t, grad) in analytic.iter().enumerate() {
        let size = params.tensors()[t].len();
        if grad.len() != size {
            return Err(Error::Shape {
                op: "grad_check",
                left: grad.shape(),
                right: params.tensors()[t].shape(),
            });
        }
        let entries: Vec<usize> = match config.max_per_tensor {
            Some(k) if k < size => {
                let mut picked = index::sample(&mut rng, size, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..size).collect(),
        };

        let mut report = TensorCheck {
            name: params.tensor_name(t),
            checked: entries.len(),
            failures: 0,
            max_rel_error: 0.0,
            worst: None,
        };
        for k in entries {
            let original = work.tensors()[t].data()[k];
            let mut at = |offset: f64| -> Result<f64> {
                work.tensors_mut()[t].data_mut()[k] = original + offset;
                let v = loss(&work);
                work.tensors_mut()[t].data_mut()[k] = original;
                v
            };
            let h = config.epsilon;
            let numeric = match config.stencil {
                Stencil::ThreePoint => (at(h)? - at(-h)?) / (2.0 * h),
                Stencil::FivePoint => {
                    let near = at(h)? - at(-h)?;
                    let far = at(2.0 * h)? - at(-2.0 * h)?;
                    (8.0 * near - far) / (12.0 * h)
                }
            };
            let a = grad.data()[k];
            let rel = relative_error(a, numeric);
            if !(rel <= config.tolerance) {
                report.failures += 1;
            }
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((k, a, numeric));
            }
        }
        overall = overall.max(report.max_rel_error);
        tensors.push(report);
    }

    Ok(GradCheckReport {
        tensors,
        max_rel_error: overall,
        tolerance: config.tolerance,
    })
}

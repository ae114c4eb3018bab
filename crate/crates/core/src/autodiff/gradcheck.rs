//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Gradients, ParamSet};
use crate::error::Result;

/// Objective value plus the inputs of every non-differentiable unit
/// (relu, leaky relu, abs) touched while computing it.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub kinks: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FdConfig {
    pub h: f64,
    pub tol: f64,
    /// Tensors with more coordinates than this are subsampled.
    pub max_coords: usize,
    /// Kink inputs closer than this to zero count as "at" the kink.
    pub kink_band: f64,
    /// Denominator floor of the relative error. Gradients smaller than this
    /// are effectively compared with absolute tolerance `tol * floor`.
    pub magnitude_floor: f64,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            h: 1e-5,
            tol: 1e-4,
            max_coords: 1000,
            kink_band: 1e-6,
            magnitude_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub tensors: Vec<TensorReport>,
}

impl FdReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.tensors.iter().all(|t| t.pass)
    }

    pub fn skipped(&self) -> usize {
        self.tensors.iter().map(|t| t.skipped).sum()
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(floor)
}

/// True when moving from `minus` to `plus` crosses, or sits on, a kink.
fn crosses_kink(base: &[f64], minus: &[f64], plus: &[f64], band: f64) -> bool {
    if base.len() != minus.len() || base.len() != plus.len() {
        return true;
    }
    base.iter().zip(minus).zip(plus).any(|((&x0, &xm), &xp)| {
        let sign = |x: f64| (x > 0.0) as i8 - (x < 0.0) as i8;
        sign(xm) != sign(xp) || sign(xm) != sign(x0) || (x0.abs() < band && xm != xp)
    })
}

pub fn finite_difference_check<F>(
    objective: F,
    params: &ParamSet,
    analytic: &Gradients,
    cfg: &FdConfig,
) -> Result<FdReport>
where
    F: Fn(&ParamSet) -> Result<Evaluation>,
{
    assert!(cfg.h > 0.0, "finite-difference step must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = objective(params)?;
    let mut work = params.clone();
    let mut tensors = Vec::new();

    for (id, name, tensor) in params.iter() {
        let n = tensor.data().len();
        let coords: Vec<usize> = if n > cfg.max_coords {
            let mut v = sample(&mut rng, n, cfg.max_coords).into_vec();
            v.sort_unstable();
            v
        } else {
            (0..n).collect()
        };
        let grad = analytic.dense(params, id);
        let mut report = TensorReport {
            name: name.to_string(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            pass: true,
        };
        for c in coords {
            let orig = tensor.data()[c];
            work.get_mut(id).data_mut()[c] = orig + cfg.h;
            let plus = objective(&work)?;
            work.get_mut(id).data_mut()[c] = orig - cfg.h;
            let minus = objective(&work)?;
            work.get_mut(id).data_mut()[c] = orig;

            if crosses_kink(&base.kinks, &minus.kinks, &plus.kinks, cfg.kink_band) {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.value - minus.value) / (2.0 * cfg.h);
            let err = relative_error(grad.data()[c], numeric, cfg.magnitude_floor);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(err);
        }
        report.pass = report.max_rel_error < cfg.tol;
        tensors.push(report);
    }
    Ok(FdReport { tensors })
}

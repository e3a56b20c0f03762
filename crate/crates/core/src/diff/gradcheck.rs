use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use crate::{Error, Real, Result};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCoordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub tol: f64,
    pub coordinates: usize,
    /// Up to five coordinates with the largest relative error, worst first.
    pub worst: Vec<WorstCoordinate>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let worst = self
            .worst
            .iter()
            .map(|w| {
                format!(
                    "{}[{}] analytic={:e} numeric={:e}",
                    w.param, w.index, w.analytic, w.numeric
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::GradCheck {
            max_rel_err: self.max_rel_err,
            tol: self.tol,
            worst,
        })
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Anything that owns a [`ParamStore`] the gradient checker can perturb.
pub trait HasParams<T: Real> {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
}

impl<T: Real> HasParams<T> for ParamStore<T> {
    fn params(&self) -> &ParamStore<T> {
        self
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        self
    }
}

/// Compares analytic gradients against the fourth-order stencil
/// `(8(f(θ+h/2) − f(θ−h/2)) − (f(θ+h) − f(θ−h))) / 6h` on up to `per_param`
/// randomly chosen coordinates of every parameter.
///
/// `loss_fn` must be deterministic; it returns the loss and the analytic
/// gradients at the given parameters. The parameters are restored before
/// returning.
pub fn grad_check<T, M, F, R>(
    subject: &mut M,
    mut loss_fn: F,
    h: f64,
    tol: f64,
    per_param: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    T: Real,
    M: HasParams<T>,
    F: FnMut(&M) -> Result<(T, Gradients<T>)>,
    R: Rng + ?Sized,
{
    let (_, analytic) = loss_fn(subject)?;
    let mut all: Vec<WorstCoordinate> = Vec::new();
    let ids: Vec<ParamId> = subject.params().ids().collect();
    for id in ids {
        let len = subject.params().get(id).len();
        if len == 0 {
            continue;
        }
        let picks = index::sample(rng, len, per_param.min(len)).into_vec();
        for i in picks {
            let orig = subject.params().get(id).values()[i];
            let mut at = |offset: f64| -> Result<f64> {
                subject.params_mut().get_mut(id).values_mut()[i] = orig + T::lit(offset);
                Ok(loss_fn(subject)?.0.to_f64().unwrap_or(f64::NAN))
            };
            let (p1, m1) = (at(h)?, at(-h)?);
            let (p2, m2) = (at(h / 2.0)?, at(-h / 2.0)?);
            subject.params_mut().get_mut(id).values_mut()[i] = orig;
            let numeric = (8.0 * (p2 - m2) - (p1 - m1)) / (6.0 * h);
            let a = analytic
                .get(id)
                .map_or(0.0, |g| g[i].to_f64().unwrap_or(f64::NAN));
            let mut rel_err = relative_error(a, numeric);
            if rel_err.is_nan() {
                rel_err = f64::INFINITY;
            }
            all.push(WorstCoordinate {
                param: subject.params().name(id).to_string(),
                index: i,
                analytic: a,
                numeric,
                rel_err,
            });
        }
    }
    all.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    let max_rel_err = all.first().map_or(0.0, |w| w.rel_err);
    let coordinates = all.len();
    all.truncate(5);
    Ok(GradCheckReport {
        max_rel_err,
        tol,
        coordinates,
        worst: all,
    })
}

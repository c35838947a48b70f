//! Finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default central-difference step in 64-bit mode.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Largest step tried by the parameter checks.
pub const CHECK_STEP: f64 = 1e-2;
/// Tenfold step reductions tried before settling for the smallest step.
const STEP_LEVELS: usize = 5;
/// Floor of the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;

/// Numerical gradient of a scalar function by central differences.
pub fn central_difference_jacobian(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numerical(format!("non-finite evaluation at coordinate {i}")));
        }
        grad.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Central differences with step control. Starting from `h_max`, the step
/// shrinks tenfold until the Richardson extrapolations from `(h, h/2)` and
/// `(h/2, h/4)` agree, and the finer one is used. A step that straddles a
/// kink of a piecewise-smooth function makes them disagree and is dropped.
pub fn extrapolated_difference_jacobian(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    h_max: f64,
) -> Result<Tensor> {
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(Error::Numerical("non-finite evaluation at the base point".into()));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        let mut diff = |h: f64| -> Result<f64> {
            probe.data_mut()[i] = orig + h;
            let fp = f(&probe);
            probe.data_mut()[i] = orig - h;
            let fm = f(&probe);
            probe.data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Numerical(format!("non-finite evaluation at coordinate {i}")));
            }
            Ok((fp - fm) / (2.0 * h))
        };
        let mut h = h_max;
        let mut estimate = None;
        let mut last = 0.0;
        for _ in 0..STEP_LEVELS {
            let (d1, d2, d4) = (diff(h)?, diff(h / 2.0)?, diff(h / 4.0)?);
            let coarse = (4.0 * d2 - d1) / 3.0;
            let fine = (4.0 * d4 - d2) / 3.0;
            let noise = 16.0 * f64::EPSILON * f0.abs().max(1.0) / h;
            if (coarse - fine).abs() <= 1e-6 * fine.abs() + noise {
                estimate = Some(fine);
                break;
            }
            last = d4;
            h /= 10.0;
        }
        grad.data_mut()[i] = estimate.unwrap_or(last);
    }
    Ok(grad)
}

/// `|analytic − numeric| / max(|numeric|, 1e-8)`, maximized over entries.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / n.abs().max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Outcome of checking every tensor of a parameter registry.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked_values: usize,
}

/// Compares analytic gradients against central differences of `loss` for
/// every entry of `params`. Parameters missing from `analytic` are treated as
/// having zero gradient.
pub fn check_param_gradients(
    params: &ParamStore,
    analytic: &BTreeMap<String, Tensor>,
    loss: impl Fn(&ParamStore) -> Result<f64>,
    h: f64,
) -> Result<GradCheckReport> {
    check_selected_gradients(params, analytic, loss, h, |_| false)
}

/// As [`check_param_gradients`], except that parameters for which
/// `exact_zero` holds are compared against a derivative known to be exactly
/// zero instead of a finite difference.
pub fn check_selected_gradients(
    params: &ParamStore,
    analytic: &BTreeMap<String, Tensor>,
    loss: impl Fn(&ParamStore) -> Result<f64>,
    h: f64,
    exact_zero: impl Fn(&str) -> bool,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: String::new(), checked_values: 0 };
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        if exact_zero(name) {
            let zero = Tensor::zeros(value.shape());
            let err = analytic.get(name).map_or(0.0, |a| max_relative_error(a, &zero));
            report.record(name, err, value.len());
            continue;
        }
        let base = value.clone();
        let mut failure = None;
        let numeric = extrapolated_difference_jacobian(
            |x| {
                *probe.get_mut(name).unwrap() = x.clone();
                match loss(&probe) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e.to_string());
                        f64::NAN
                    }
                }
            },
            &base,
            h,
        );
        *probe.get_mut(name)? = base.clone();
        if let Some(msg) = failure {
            return Err(Error::Numerical(msg));
        }
        let numeric = numeric?;
        let zero = Tensor::zeros(base.shape());
        let a = analytic.get(name).unwrap_or(&zero);
        report.record(name, max_relative_error(a, &numeric), base.len());
    }
    Ok(report)
}

impl GradCheckReport {
    fn record(&mut self, name: &str, err: f64, values: usize) {
        self.checked_values += values;
        if self.worst_param.is_empty() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst_param = name.to_string();
        }
    }
}

type CaseFn = Box<dyn Fn(u64) -> Result<GradCheckReport> + Send + Sync>;

/// Named gradient-check problems, each parameterized by a seed.
#[derive(Default)]
pub struct GradCheckRegistry {
    cases: BTreeMap<String, CaseFn>,
}

impl GradCheckRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        case: impl Fn(u64) -> Result<GradCheckReport> + Send + Sync + 'static,
    ) {
        self.cases.insert(name.to_string(), Box::new(case));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.cases.keys().map(String::as_str)
    }

    /// Runs the named check and returns its max relative error.
    pub fn grad_check(&self, op_name: &str, seed: u64) -> Result<f64> {
        self.run(op_name, seed).map(|r| r.max_rel_error)
    }

    pub fn run(&self, op_name: &str, seed: u64) -> Result<GradCheckReport> {
        let case = self
            .cases
            .get(op_name)
            .ok_or_else(|| Error::Lookup(format!("no analytic backward registered for '{op_name}'")))?;
        case(seed)
    }
}

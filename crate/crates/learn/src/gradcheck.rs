//! Central finite-difference verification of hand-written gradients.

use ndarray::Array2;

use otws_core::Result;

use crate::models::{Generator, GeneratorCache};
use crate::nn::{Mode, Param, Sequential};

/// Relative tolerance between analytic and numeric derivatives.
pub const RELATIVE_TOLERANCE: f64 = 1e-5;
/// Differences below this are accepted regardless of magnitude.
pub const ABSOLUTE_FLOOR: f64 = 1e-7;
/// Step is `STEP · max(1, |θ|)`.
pub const STEP: f64 = 1e-6;

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checked: usize,
    pub worst_relative: f64,
    pub worst_absolute: f64,
    pub failures: Vec<String>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    fn record(&mut self, what: String, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        self.checked += 1;
        self.worst_absolute = self.worst_absolute.max(abs);
        if abs > ABSOLUTE_FLOOR {
            self.worst_relative = self.worst_relative.max(rel);
        }
        if abs > ABSOLUTE_FLOOR && rel > RELATIVE_TOLERANCE {
            self.failures.push(format!(
                "{what}: analytic {analytic:e}, numeric {numeric:e}"
            ));
        }
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.worst_relative = self.worst_relative.max(other.worst_relative);
        self.worst_absolute = self.worst_absolute.max(other.worst_absolute);
        self.failures.extend(other.failures);
    }
}

/// A scalar loss of a network output, returning the loss and `∂L/∂output`.
pub trait Loss {
    fn eval(&mut self, out: &Array2<f64>) -> Result<(f64, Array2<f64>)>;
}

impl<F: FnMut(&Array2<f64>) -> Result<(f64, Array2<f64>)>> Loss for F {
    fn eval(&mut self, out: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        self(out)
    }
}

fn step(x: f64) -> f64 {
    STEP * x.abs().max(1.0)
}

fn central<F: FnMut(f64) -> Result<f64>>(x: f64, mut f: F) -> Result<f64> {
    let h = step(x);
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

fn param_entry(params: Vec<&mut Param>, p: usize, idx: (usize, usize)) -> &mut f64 {
    &mut params.into_iter().nth(p).expect("parameter index").value[idx]
}

/// Checks every parameter gradient and the input gradient of `net` at `x`.
pub fn check_sequential<L: Loss>(
    net: &mut Sequential,
    x: &Array2<f64>,
    mode: Mode,
    loss: &mut L,
) -> Result<GradReport> {
    net.zero_grad();
    let (out, cache) = net.forward(x, mode)?;
    let (_, dy) = loss.eval(&out)?;
    let dx = net.backward(&cache, &dy)?;
    let analytic: Vec<Array2<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();

    let mut report = GradReport::default();
    let mut value = |net: &mut Sequential, x: &Array2<f64>| -> Result<f64> {
        let (out, _) = net.forward(x, mode)?;
        Ok(loss.eval(&out)?.0)
    };
    for (p, grad) in analytic.iter().enumerate() {
        for (idx, &g) in grad.indexed_iter() {
            let original = net.params()[p].value[idx];
            let numeric = central(original, |v| {
                *param_entry(net.params_mut(), p, idx) = v;
                value(net, x)
            })?;
            *param_entry(net.params_mut(), p, idx) = original;
            report.record(format!("param {p} {idx:?}"), g, numeric);
        }
    }
    let mut xp = x.clone();
    for (idx, &g) in dx.indexed_iter() {
        let original = x[idx];
        let numeric = central(original, |v| {
            xp[idx] = v;
            value(net, &xp)
        })?;
        xp[idx] = original;
        report.record(format!("input {idx:?}"), g, numeric);
    }
    Ok(report)
}

/// Checks the generator's parameter gradients for a loss of its normalized output.
pub fn check_generator<L: Loss>(
    gen: &mut Generator,
    z: &Array2<f64>,
    loss: &mut L,
) -> Result<GradReport> {
    gen.net.zero_grad();
    let (out, cache): (Array2<f64>, GeneratorCache) = gen.forward_train(z)?;
    let (_, dy) = loss.eval(&out)?;
    gen.backward(&cache, &dy)?;
    let analytic: Vec<Array2<f64>> = gen.net.params().iter().map(|p| p.grad.clone()).collect();

    let mut report = GradReport::default();
    for (p, grad) in analytic.iter().enumerate() {
        for (idx, &g) in grad.indexed_iter() {
            let original = gen.net.params()[p].value[idx];
            let numeric = central(original, |v| {
                *param_entry(gen.net.params_mut(), p, idx) = v;
                let out = gen.forward(z)?;
                Ok(loss.eval(&out)?.0)
            })?;
            *param_entry(gen.net.params_mut(), p, idx) = original;
            report.record(format!("generator param {p} {idx:?}"), g, numeric);
        }
    }
    Ok(report)
}

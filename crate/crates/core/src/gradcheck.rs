//! Finite-difference gradient verification.
//!
//! These routines only evaluate losses; they never touch the tape's backward
//! pass, so they serve as an independent check on it.

use crate::error::{Error, Result};
use crate::grad::{ParamGrads, ParamStore, Tape, Tensor, Var};

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Relative error with a `1e-6` floor for near-zero partials.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    rel_error_with_floor(analytic, numeric, 1e-6)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = buf[i];
            buf[i] = orig + eps;
            let plus = f(&buf);
            buf[i] = orig - eps;
            let minus = f(&buf);
            buf[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Step size, pass threshold and relative-error floor of a parameter check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSettings {
    pub eps: f64,
    pub tolerance: f64,
    pub floor: f64,
}

impl FdSettings {
    /// Whole-model losses. Central differences of a loss of magnitude `L`
    /// carry roughly `1e-16 * L / eps` of rounding noise (about `1e-10`
    /// here), so partials below the floor are judged against the floor.
    /// Single primitives on inputs of order one.
    pub const PRIMITIVE: Self = Self {
        eps: 1e-6,
        tolerance: 1e-7,
        floor: 1e-6,
    };

    pub const MODEL: Self = Self {
        eps: 1e-5,
        tolerance: 1e-4,
        floor: 1e-5,
    };
}

/// Outcome of one gradient comparison.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub tolerance: f64,
    pub floor: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {}: {} partials, max rel err {:.3e} (tol {:.0e}, floor {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.max_rel_error,
            self.tolerance,
            self.floor
        )?;
        if let Some((param, idx, a, n)) = &self.worst {
            write!(f, "; worst {param}[{idx}] analytic {a:.6e} numeric {n:.6e}")?;
        }
        Ok(())
    }
}

/// Compares `analytic` against central differences of `loss` over every
/// parameter scalar. `loss` must be a pure function of the store.
pub fn check_param_grads(
    name: &str,
    store: &ParamStore,
    analytic: &ParamGrads,
    settings: FdSettings,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<CheckReport> {
    let mut work = store.clone();
    let mut report = CheckReport {
        name: name.to_string(),
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance: settings.tolerance,
        floor: settings.floor,
    };
    let eps = settings.eps;
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let plus = loss(&work)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let minus = loss(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).data()[i];
            let err = rel_error_with_floor(a, numeric, settings.floor);
            report.checked += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst = Some((store.name(id).to_string(), i, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Checks the input gradient of `sum(weights * f(x))` against central
/// differences, `weights` being fixed and supplied by the caller so that
/// every output element contributes with a distinct coefficient.
pub fn check_input_grads(
    name: &str,
    x: &Tensor,
    weights: &[f64],
    settings: FdSettings,
    f: impl Fn(&mut Tape, Var) -> Result<Var>,
) -> Result<CheckReport> {
    let store = ParamStore::new();
    let eval = |x: &Tensor| -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new(&store);
        let xv = tape.input(x.clone());
        let y = f(&mut tape, xv)?;
        let shape = tape.shape(y).to_vec();
        if tape.value(y).len() != weights.len() {
            return Err(Error::invalid(format!(
                "{name}: {} outputs but {} weights",
                tape.value(y).len(),
                weights.len()
            )));
        }
        let c = tape.constant(Tensor::new(&shape, weights.to_vec())?);
        let prod = tape.mul(y, c)?;
        let loss = tape.sum(prod);
        let g = tape.backward(loss)?;
        let grad = g.wrt(xv).map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec);
        Ok((tape.item(loss), grad))
    };
    let (_, analytic) = eval(x)?;
    let mut failure = None;
    let numeric = central_difference(x.data(), settings.eps, |data| {
        let t = Tensor::new(x.shape(), data.to_vec()).expect("same shape");
        match eval(&t) {
            Ok((l, _)) => l,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let mut report = CheckReport {
        name: name.to_string(),
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance: settings.tolerance,
        floor: settings.floor,
    };
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = rel_error_with_floor(*a, *n, settings.floor);
        report.checked += 1;
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
            report.worst = Some(("x".into(), i, *a, *n));
        }
    }
    Ok(report)
}

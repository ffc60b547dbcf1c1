//! Central finite-difference checking of tape gradients.
//!
//! The numeric side never touches the backward pass: it re-runs the forward
//! closure with each parameter entry nudged by `±step`.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Magnitudes below this are compared absolutely; finite differences carry
/// roughly `step²` truncation error, which swamps tiny gradients.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of every trainable entry in `store`
/// against central differences of `f`.
pub fn check_gradients<F>(store: &mut ParamStore, step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    check_gradients_sampled(store, step, usize::MAX, f)
}

/// Like [`check_gradients`], but checks at most `per_param` evenly spaced
/// entries of each tensor.
pub fn check_gradients_sampled<F>(
    store: &mut ParamStore,
    step: f64,
    per_param: usize,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let root = f(s, &mut tape)?;
        Ok(tape.scalar(root))
    };

    store.zero_grad();
    let mut tape = Tape::new();
    let root = f(store, &mut tape)?;
    tape.backward(root)?.accumulate_into(&tape, store);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for id in store.trainable_ids() {
        let n = store.value(id).len();
        let stride = if n > per_param {
            n.div_ceil(per_param)
        } else {
            1
        };
        for k in (0..n).step_by(stride) {
            let original = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = original + step;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[k] = original - step;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * step);
            if !numeric.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite finite difference for {}[{k}]",
                    store.get(id).name
                )));
            }
            let analytic = store.get(id).grad.data()[k];
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((store.get(id).name.clone(), k));
                }
            }
        }
    }
    Ok(report)
}

//! Central-difference verification of tape gradients.

use crate::error::Result;

use super::{Gradients, NodeId, ParamStore, Tape};

/// Denominator floor for the relative error; below it the error is absolute.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
    /// [`Tape::kink_margin`] at the checked point.
    pub kink_margin: f64,
}

impl GradCheckReport {
    pub fn within(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Compares the tape gradient of `forward` against `(f(v+h) − f(v−h)) / 2h`
/// for every entry of every parameter in `store`.
///
/// `forward` must be deterministic and return a 1×1 loss node.
pub fn grad_check<F>(store: &mut ParamStore<f64>, step: f64, forward: F) -> Result<GradCheckReport>
where
    F: for<'s> Fn(&mut Tape<'s, f64>) -> Result<NodeId>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = forward(&mut tape)?;
        tape.backward(loss)?
    };
    grad_check_against(store, step, &analytic, forward)
}

/// [`grad_check`] with caller-supplied analytic gradients.
pub fn grad_check_against<F>(
    store: &mut ParamStore<f64>,
    step: f64,
    analytic: &Gradients<f64>,
    forward: F,
) -> Result<GradCheckReport>
where
    F: for<'s> Fn(&mut Tape<'s, f64>) -> Result<NodeId>,
{
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = forward(&mut tape)?;
        use super::Graph;
        tape.value(&loss).item()
    };

    let kink_margin = {
        let mut tape = Tape::new(store);
        forward(&mut tape)?;
        tape.kink_margin()
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
        kink_margin,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        for k in 0..n {
            let original = store.value(id).data()[k];
            store.get_mut(id).value.data_mut()[k] = original + step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = original - step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let exact = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            let denom = exact.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            let err = (exact - numeric).abs() / denom;
            report.entries_checked += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst = Some((store.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}

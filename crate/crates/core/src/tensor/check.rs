use super::{Bound, Params, Tape, TensorError, Var};

#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, GRADIENT_FLOOR)` over all entries.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_entry: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub entries_checked: usize,
}

/// Gradient entries smaller than this are compared in absolute terms against it.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Compares tape gradients of a scalar loss against five-point central
/// differences over every parameter entry.
pub fn finite_diff_check<F>(params: &Params, epsilon: f64, loss: F) -> Result<FiniteDiffReport, TensorError>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>, TensorError>,
{
    if !(epsilon > 0.0) {
        return Err(TensorError::BadEpsilon(epsilon));
    }
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let out = loss(&tape, &bound)?;
    let analytic = bound.gradients(&tape.backward(out)?);

    let eval = |p: &Params| -> Result<f64, TensorError> {
        let tape = Tape::new();
        let bound = p.bind_frozen(&tape);
        loss(&tape, &bound)?.item()
    };

    let mut probe = params.clone();
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_entry: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        entries_checked: 0,
    };
    for id in params.ids() {
        let name = params.name(id).to_string();
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            let nonfinite = || TensorError::NonFiniteProbe { name: name.clone(), entry: k };
            let mut at = |offset: f64| -> Result<f64, TensorError> {
                probe.get_mut(id).data_mut()[k] = orig + offset;
                let v = eval(&probe).map_err(|_| nonfinite())?;
                probe.get_mut(id).data_mut()[k] = orig;
                if v.is_finite() { Ok(v) } else { Err(nonfinite()) }
            };
            let (p1, m1, p2, m2) = (at(epsilon)?, at(-epsilon)?, at(2.0 * epsilon)?, at(-2.0 * epsilon)?);
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * epsilon);
            let a = analytic[id.0].data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_entry = k;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

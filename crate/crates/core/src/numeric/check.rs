use super::{Gradients, ParamSet};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compare `analytic` gradients against central differences of `loss`.
///
/// At most `max_per_tensor` evenly spaced coordinates of each parameter are
/// checked (all of them when `None`). The error of a coordinate is
/// `|a - n| / max(1e-6, |a| + |n|)`; parameters missing from `analytic`
/// count as zero gradient.
pub fn grad_check(
    params: &ParamSet<f64>,
    analytic: &Gradients<f64>,
    loss: impl Fn(&ParamSet<f64>) -> f64,
    eps: f64,
    max_per_tensor: Option<usize>,
) -> GradCheckReport {
    let mut work = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    for (name, t) in params {
        let n = t.len();
        let step = match max_per_tensor {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for i in (0..n).step_by(step) {
            let orig = t.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let up = loss(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let down = loss(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(name).map_or(0.0, |g| g.data()[i]);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    report
}

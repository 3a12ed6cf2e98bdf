use super::{Graph, ParamRegistry, Var};
use crate::error::Result;

/// Denominator floor for relative errors, so entries whose true gradient is
/// zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric gradient at the worst entry.
    pub worst_values: (f64, f64),
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compare analytic gradients against central finite differences on every
/// unfrozen scalar entry of `registry`. Frozen parameters are skipped.
///
/// Gradients in the registry are cleared on return.
pub fn check_gradients<F>(loss_builder: F, registry: &mut ParamRegistry, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamRegistry) -> Result<Var>,
{
    registry.zero_grad();
    let mut g = Graph::new();
    let loss = loss_builder(&mut g, registry)?;
    g.backward(loss, registry)?;
    drop(g);

    let eval = |reg: &ParamRegistry| -> Result<f64> {
        let mut g = Graph::new();
        let loss = loss_builder(&mut g, reg)?;
        g.scalar(loss)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        entries_checked: 0,
    };
    let ids: Vec<_> = registry.ids().filter(|&id| !registry.is_frozen(id)).collect();
    for id in ids {
        let analytic = registry.grad(id).clone();
        for k in 0..analytic.len() {
            let orig = registry.value(id).data()[k];
            registry.value_mut(id).data_mut()[k] = orig + eps;
            let plus = eval(registry)?;
            registry.value_mut(id).data_mut()[k] = orig - eps;
            let minus = eval(registry)?;
            registry.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic.data()[k], numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((registry.name(id).to_string(), k));
                report.worst_values = (analytic.data()[k], numeric);
            }
        }
    }
    registry.zero_grad();
    Ok(report)
}

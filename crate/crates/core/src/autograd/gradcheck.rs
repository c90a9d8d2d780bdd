//! Central finite-difference verification of reverse-mode gradients.

use crate::autograd::params::ParamStore;
use crate::autograd::tape::{NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Max over checked entries of `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub eps: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_entries_per_param: None,
        }
    }
}

fn evaluate<F>(store: &ParamStore<f64>, f: &mut F, name: &str) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let value = tape.value(loss);
    if value.len() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    let v = value.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(v)
}

/// Compares analytic gradients of every trainable parameter of `store`
/// against central differences of `f` and returns the worst relative error.
pub fn gradcheck<F>(store: &mut ParamStore<f64>, eps: f64, f: F) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    gradcheck_with(
        store,
        GradcheckOptions {
            eps,
            max_entries_per_param: None,
        },
        f,
    )
    .map(|r| r.max_rel_error)
}

pub fn gradcheck_with<F>(store: &mut ParamStore<f64>, opts: GradcheckOptions, mut f: F) -> Result<GradcheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    if opts.eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(crate::error::invalid("gradcheck", "eps must be positive"));
    }
    store.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        tape.backprop(loss, store)?;
    }
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for id in ids {
        let name = store.get(id).name.clone();
        let analytic = store.get(id).grad.data().to_vec();
        if let Some(bad) = analytic.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("{name}[{bad}]")));
        }
        let len = analytic.len();
        let step = match opts.max_entries_per_param {
            Some(max) if max > 0 && len > max => len.div_ceil(max),
            _ => 1,
        };
        for i in (0..len).step_by(step) {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.eps;
            let plus = evaluate(store, &mut f, &name);
            store.get_mut(id).value.data_mut()[i] = orig - opts.eps;
            let minus = evaluate(store, &mut f, &name);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.eps);
            let a = analytic[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if report.worst_param.is_empty() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn polynomial_is_exact() {
        let mut store = ParamStore::<f64>::new();
        let w = store
            .add(
                "w",
                Tensor::from_fn(&[10], |i| ((i as f64) * 1.7).sin()).unwrap(),
                true,
            )
            .unwrap();
        let err = gradcheck(&mut store, 1e-5, |tape, store| {
            let x = tape.param(store, w);
            let sq = tape.mul(x, x)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn non_finite_names_parameter() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("weights", Tensor::full(&[2], 0.0).unwrap(), true).unwrap();
        let err = gradcheck(&mut store, 1e-5, |tape, store| {
            let x = tape.param(store, w);
            let l = tape.ln(x);
            Ok(tape.sum(l))
        })
        .unwrap_err();
        assert!(err.to_string().contains("weights"), "{err}");
    }

    #[test]
    fn rejects_non_positive_eps() {
        let mut store = ParamStore::<f64>::new();
        assert!(gradcheck(&mut store, 0.0, |tape, _| Ok(tape.constant(Tensor::scalar(1.0)))).is_err());
    }
}

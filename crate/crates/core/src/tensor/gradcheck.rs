use super::{ParamStore, Result, Tape, TensorError, Var};
use crate::scalar::Scalar;

/// Compares tape gradients of a scalar function of the trainable
/// parameters against central differences `(f(x+eps) − f(x−eps)) / 2eps`.
///
/// Returns the largest `|analytic − numeric| / max(1, |numeric|)` over all
/// trainable coordinates. Parameter values are restored afterwards and the
/// store's gradients are left holding the analytic gradient.
pub fn grad_check<S, F>(store: &mut ParamStore<S>, eps: f64, f: F) -> Result<f64>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, &ParamStore<S>) -> Result<Var<'t, S>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(TensorError::Invalid(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    store.zero_grad();
    {
        let tape = Tape::new();
        let loss = f(&tape, store)?;
        tape.backward(loss, store)?;
    }
    let eval = |store: &ParamStore<S>| -> Result<f64> {
        let tape = Tape::new();
        let loss = f(&tape, store)?;
        let v = loss.value().item().ok_or_else(|| TensorError::NotScalar(loss.shape()))?;
        Ok(v.to_f64_lossless())
    };
    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).trainable()).collect();
    let mut worst = 0.0_f64;
    for id in ids {
        for i in 0..store.get(id).value.len() {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + S::of(eps);
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - S::of(eps);
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = store.get(id).grad.data()[i].to_f64_lossless();
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}

//! Central-difference verification of tape gradients.

use alloc::format;
use alloc::vec::Vec;

use super::{Graph, ParamStore, Var};
use crate::{Error, Result};

/// Builds a scalar loss from the current parameter values.
pub trait ScalarFn {
    fn build(&self, store: &ParamStore, g: &mut Graph) -> Result<Var>;
}

impl<F> ScalarFn for F
where
    F: Fn(&ParamStore, &mut Graph) -> Result<Var>,
{
    fn build(&self, store: &ParamStore, g: &mut Graph) -> Result<Var> {
        self(store, g)
    }
}

fn evaluate(f: &impl ScalarFn, store: &ParamStore) -> Result<f64> {
    let mut g = Graph::new();
    let loss = f.build(store, &mut g)?;
    Ok(g.scalar(loss))
}

/// Analytic gradient of `f` with respect to `path`, via the tape.
pub fn analytic_grad(f: &impl ScalarFn, store: &ParamStore, path: &str) -> Result<Vec<f64>> {
    let mut work = store.clone();
    work.zero_grad();
    let mut g = Graph::new();
    let loss = f.build(&work, &mut g)?;
    g.backward(loss, &mut work)?;
    let t = work.get(path)?;
    Ok(t.grad()
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| alloc::vec![0.0; t.numel()]))
}

/// Central-difference gradient of `f` with respect to every element of `path`.
pub fn numeric_grad(f: &impl ScalarFn, store: &ParamStore, path: &str, h: f64) -> Result<Vec<f64>> {
    let mut work = store.clone();
    let n = work.get(path)?.numel();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let orig = work.get(path)?.data()[i];
        work.get_mut(path)?.data_mut()[i] = orig + h;
        let plus = evaluate(f, &work)?;
        work.get_mut(path)?.data_mut()[i] = orig - h;
        let minus = evaluate(f, &work)?;
        work.get_mut(path)?.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Maximum of `|analytic − numeric| / max(1, |numeric|)` over the elements of
/// the parameter at `path`.
///
/// `h` must lie in `[1e-7, 1e-3]`. `f` is evaluated twice at the unperturbed
/// point first; differing results are reported as a contract error.
pub fn finite_diff_check(f: &impl ScalarFn, store: &ParamStore, path: &str, h: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::contract(format!(
            "finite difference step {h} outside [1e-7, 1e-3]"
        )));
    }
    let first = evaluate(f, store)?;
    let second = evaluate(f, store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::contract(format!(
            "function is not deterministic: {first} then {second}"
        )));
    }
    let analytic = analytic_grad(f, store, path)?;
    let numeric = numeric_grad(f, store, path, h)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max))
}

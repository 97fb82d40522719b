//! Central finite-difference oracle for checking tape gradients.

use serde::Serialize;

use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub numel: usize,
    /// `max|analytic - numeric| / max(max|analytic|, max|numeric|)` over the tensor.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tol: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err < self.tol)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

/// Numeric gradient of `f` at `params` by central differences with the given step.
pub fn finite_difference<F>(mut f: F, params: &[Tensor<f64>], step: f64) -> Result<Vec<Tensor<f64>>>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Evaluation("non-finite parameter".into()));
    }
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = vec![0.0; params[p].numel()];
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = f(&work)?;
            work[p].data_mut()[i] = orig - step;
            let minus = f(&work)?;
            work[p].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Evaluation(format!(
                    "non-finite objective while perturbing parameter {p}[{i}]"
                )));
            }
            *g = (plus - minus) / (2.0 * step);
        }
        out.push(Tensor::new(params[p].shape(), grad)?);
    }
    Ok(out)
}

/// Compare analytic gradients against central finite differences of `f`.
pub fn grad_check<F>(
    names: &[String],
    f: F,
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    if names.len() != params.len() || analytic.len() != params.len() {
        return Err(Error::dim("names, params, and analytic gradients must align"));
    }
    let numeric = finite_difference(f, params, step)?;
    let entries = names
        .iter()
        .zip(analytic.iter().zip(&numeric))
        .map(|(name, (a, n))| {
            let abs = a.max_abs_diff(n)?;
            let scale = a.max_abs().max(n.max_abs());
            let rel = if scale > 0.0 { abs / scale } else { 0.0 };
            Ok(GradCheckEntry { name: name.clone(), numel: a.numel(), max_rel_err: rel, max_abs_err: abs })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport { step, tol, entries })
}

/// A scalar objective that can be recorded at any precision.
pub trait ScalarFn {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, params: &[Var]) -> Result<Var>;
}

/// Gradient check of `f` whose analytic gradient is taken at precision `T`
/// while the finite-difference oracle always runs at 64-bit.
pub fn check_scalar_fn<T: Real, F: ScalarFn>(
    f: &F,
    params: &[Tensor<f64>],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.cast())).collect();
    let out = f.eval(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.get(*v).map(Tensor::cast).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    let names: Vec<String> = (0..params.len()).map(|i| format!("param{i}")).collect();
    grad_check(
        &names,
        |ps| {
            let mut tape = Tape::<f64>::new();
            let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
            let out = f.eval(&mut tape, &vars)?;
            Ok(tape.value(out).item())
        },
        params,
        &analytic,
        step,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;
    impl ScalarFn for Quadratic {
        fn eval<T: Real>(&self, tape: &mut Tape<T>, p: &[Var]) -> Result<Var> {
            let sq = tape.mul(p[0], p[0])?;
            Ok(tape.sum(sq))
        }
    }

    #[test]
    fn quadratic_matches_to_machine_precision() {
        let theta = Tensor::new(&[4], vec![0.3, -1.2, 2.5, 0.0]).unwrap();
        let report = check_scalar_fn::<f64, _>(&Quadratic, &[theta], 1e-3, 1e-12).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn non_finite_objective_is_evaluation_error() {
        let theta = Tensor::new(&[1], vec![1.0]).unwrap();
        let err = finite_difference(|_| Ok(f64::NAN), &[theta], 1e-3).unwrap_err();
        assert!(matches!(err, Error::Evaluation(_)));
    }

    #[test]
    fn wrong_gradient_fails() {
        let theta = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let wrong = Tensor::new(&[2], vec![2.0, 5.0]).unwrap();
        let report = grad_check(
            &["theta".into()],
            |p| Ok(p[0].data().iter().map(|x| x * x).sum()),
            &[theta],
            &[wrong],
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(!report.passed());
        assert!(report.worst() > 0.1);
    }
}

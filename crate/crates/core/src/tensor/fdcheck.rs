//! Central-difference gradient oracle. Runs at f64 only; f32 finite
//! differences are too noisy for the tolerances this project uses.

use thiserror::Error;

use super::Tensor;

#[derive(Debug, Error)]
pub enum FdError {
    #[error("function is not deterministic: two evaluations disagree ({0} vs {1})")]
    NonDeterministic(f64, f64),
    #[error("function output is not scalar (shape {0:?})")]
    NonScalarOutput(Vec<usize>),
    #[error("input tensor is not gradient-tracked")]
    UntrackedInput,
}

/// Max relative error between the analytic gradient of `f` at `x` and the
/// central difference (f(x+h·e_i) − f(x−h·e_i)) / 2h, per coordinate.
///
/// The relative error denominator is max(|analytic|, |numeric|, 1e-8).
/// `x` is restored to its original values before returning.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64, FdError>
where
    F: Fn(&Tensor<f64>) -> Tensor<f64>,
{
    if !x.requires_grad() {
        return Err(FdError::UntrackedInput);
    }
    let probe = f(x);
    if probe.len() != 1 {
        return Err(FdError::NonScalarOutput(probe.shape().to_vec()));
    }
    let second = f(x);
    let (a, b) = (probe.item(), second.item());
    if a.to_bits() != b.to_bits() {
        return Err(FdError::NonDeterministic(a, b));
    }

    x.zero_grad();
    let y = f(x);
    y.backward();
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.len()]);
    x.zero_grad();

    let original = x.to_vec();
    let mut work = original.clone();
    let mut max_err = 0.0f64;
    for i in 0..work.len() {
        let v = original[i];
        work[i] = v + h;
        x.set_values(&work);
        let fp = f(x).item();
        work[i] = v - h;
        x.set_values(&work);
        let fm = f(x).item();
        work[i] = v;
        let numeric = (fp - fm) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let err = (analytic[i] - numeric).abs() / denom;
        if err > max_err {
            max_err = err;
        }
    }
    x.set_values(&original);
    Ok(max_err)
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_case_is_exact() {
        let x = Tensor::new_tracked(&[5], vec![0.3, -1.2, 4.0, 0.0, 2.5]);
        let err = finite_diff_check(|x| x.sum_all(), &x, DEFAULT_FD_STEP).unwrap();
        assert!(err <= 1e-10, "linear fd error {err}");
    }

    #[test]
    fn sigmoid_sum_self_test() {
        let x = Tensor::new_tracked(&[6], vec![0.1, -0.5, 1.7, -2.0, 0.0, 3.2]);
        let err = finite_diff_check(|x| x.sigmoid().sum_all(), &x, DEFAULT_FD_STEP).unwrap();
        assert!(err <= 1e-7, "sigmoid fd error {err}");
    }

    #[test]
    fn max_with_separated_values_passes() {
        // Values perturbed apart by far more than 10h so the argmax is stable.
        let x = Tensor::new_tracked(&[2, 3], vec![0.0, 0.01, 0.02, 0.05, 0.03, 0.04]);
        let err = finite_diff_check(
            |x| x.reduce_max_axis(1, false).sum_all(),
            &x,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!(err <= 1e-4, "max fd error {err}");
    }

    #[test]
    fn non_deterministic_f_detected() {
        use std::cell::Cell;
        let flip = Cell::new(false);
        let x = Tensor::new_tracked(&[2], vec![1.0, 2.0]);
        let res = finite_diff_check(
            |x| {
                flip.set(!flip.get());
                let c = if flip.get() { 1.0 } else { 2.0 };
                x.mul_scalar(c).sum_all()
            },
            &x,
            DEFAULT_FD_STEP,
        );
        assert!(matches!(res, Err(FdError::NonDeterministic(_, _))));
    }

    #[test]
    fn restores_input_values() {
        let x = Tensor::new_tracked(&[3], vec![1.0, 2.0, 3.0]);
        let _ = finite_diff_check(|x| x.mul(x).sum_all(), &x, DEFAULT_FD_STEP).unwrap();
        assert_eq!(x.to_vec(), vec![1.0, 2.0, 3.0]);
    }
}

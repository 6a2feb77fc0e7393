use super::{Tape, TapeError, Var};
use crate::scalar::Scalar;

/// Compares reverse-mode gradients of `f` against central differences at `point`.
///
/// `f` receives a fresh tape and the leaf holding the point (shape `1×n`) and
/// must return a scalar node. The result is
/// `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
///
/// Nondifferentiable points (for example `|x|` at 0, where the tape uses the
/// subgradient 0) are outside the contract; callers sample away from kinks.
pub fn grad_check<T, F>(f: F, point: &[T], eps: T) -> Result<T, TapeError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var, TapeError>,
{
    grad_check_shaped(f, point, [1, point.len()], eps)
}

/// [`grad_check`] with an explicit leaf shape.
pub fn grad_check_shaped<T, F>(f: F, point: &[T], shape: [usize; 2], eps: T) -> Result<T, TapeError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var, TapeError>,
{
    if !(eps > T::zero()) {
        return Err(TapeError::BadStep);
    }
    let eval = |p: Vec<T>| -> Result<(T, Tape<T>, Var, Var), TapeError> {
        let mut tape = Tape::new();
        let x = tape.try_leaf(p, shape[0], shape[1])?;
        let y = f(&mut tape, x)?;
        Ok((tape.scalar(y), tape, x, y))
    };

    let (value, tape, leaf, root) = eval(point.to_vec())?;
    if !value.is_finite() {
        return Err(TapeError::NonFinite {
            coordinate: 0,
            value: value.as_f64(),
        });
    }
    let analytic = tape.backward(root)?.wrt(leaf);

    let two = T::lit(2.0);
    let mut worst = T::zero();
    for i in 0..point.len() {
        let mut plus = point.to_vec();
        plus[i] += eps;
        let mut minus = point.to_vec();
        minus[i] -= eps;
        let fp = eval(plus)?.0;
        let fm = eval(minus)?.0;
        if !fp.is_finite() || !fm.is_finite() || !analytic[i].is_finite() {
            let bad = [fp, fm, analytic[i]].into_iter().find(|v| !v.is_finite()).unwrap();
            return Err(TapeError::NonFinite {
                coordinate: i,
                value: bad.as_f64(),
            });
        }
        let numeric = (fp - fm) / (two * eps);
        let err = (analytic[i] - numeric).abs() / T::one().max(analytic[i].abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_passes() {
        let err = grad_check(
            |t, x| {
                let s = t.softplus(x);
                Ok(t.sum(s))
            },
            &[0.3f64],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_has_zero_error() {
        let err = grad_check(|t, _x| Ok(t.scalar_constant(4.0)), &[1.0f64, -2.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn abs_kink_uses_zero_subgradient() {
        // At the kink both sides agree on 0, but the point is excluded from
        // gradient-check sampling in general.
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(vec![0.0], 1, 1);
        let a = tape.abs(x);
        let g = tape.backward(a).unwrap();
        assert_eq!(g.wrt(x), vec![0.0]);
    }

    #[test]
    fn non_finite_reports_coordinate() {
        let err = grad_check(
            |t, x| {
                let l = t.ln(x);
                Ok(t.sum(l))
            },
            &[1.0f64, 1e-9],
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, TapeError::NonFinite { coordinate: 1, .. }));
    }

    #[test]
    fn rejects_non_positive_step() {
        assert_eq!(
            grad_check(|t, x| Ok(t.sum(x)), &[1.0f64], 0.0).unwrap_err(),
            TapeError::BadStep
        );
    }
}

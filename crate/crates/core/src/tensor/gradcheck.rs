//! Central finite-difference checks of taped gradients.

use super::{Graph, Result, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat index where the worst error occurred.
    pub worst_index: usize,
    pub checked: usize,
}

/// `|ad - fd| / max(1, |fd|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Check the taped gradient of the scalar `f(x)` against central differences
/// at every element of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let loss = f(&mut g, xv)?;
    g.backward(loss)?;
    let analytic = g.grad(xv).cloned().expect("leaf gradient present after backward");
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let out = f(&mut g, v)?;
        scalar_of(&g, out)
    };
    compare_with_finite_differences(&analytic, eval, x, h, None)
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64> {
    g.value(v)
        .item()
        .ok_or_else(|| TensorError::NotScalar(g.shape(v).to_vec()))
}

/// Compare a supplied gradient with central differences of `eval` around `x`.
/// `indices` restricts the check to a subset of flat positions.
pub fn compare_with_finite_differences<E>(
    analytic: &Tensor,
    mut eval: E,
    x: &Tensor,
    h: f64,
    indices: Option<&[usize]>,
) -> Result<GradCheck>
where
    E: FnMut(&Tensor) -> Result<f64>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(TensorError::Invalid {
            op: "grad_check",
            msg: format!("step {h} outside [1e-6, 1e-3]"),
        });
    }
    if analytic.shape() != x.shape() {
        return Err(TensorError::Shape {
            op: "grad_check",
            lhs: analytic.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let first = eval(x)?;
    let second = eval(x)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    let mut probe = x.clone();
    for &i in idx {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic.data()[i], fd);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

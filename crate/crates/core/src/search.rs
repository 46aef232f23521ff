//! Golden-section minimization of a unimodal function on a closed interval.

use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Minimum<F> {
    pub x: F,
    pub value: F,
    /// Every `(x, f(x))` pair evaluated, in evaluation order.
    pub trace: Vec<(F, F)>,
}

/// Shrinks `[lo, hi]` by the inverse golden ratio until it is narrower than
/// `tol`, then returns the best interior point evaluated.
pub fn golden_section<F: Scalar>(mut f: impl FnMut(F) -> F, lo: F, hi: F, tol: F) -> Minimum<F> {
    let inv_phi = (F::lit(5.0).sqrt() - F::one()) / F::lit(2.0);
    let (mut a, mut b) = (lo, hi);
    let mut trace = Vec::new();
    let mut eval = |x: F, trace: &mut Vec<(F, F)>| {
        let v = f(x);
        trace.push((x, v));
        v
    };
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c, &mut trace);
    let mut fd = eval(d, &mut trace);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c, &mut trace);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d, &mut trace);
        }
    }
    let (x, value) = if fc < fd { (c, fc) } else { (d, fd) };
    Minimum { x, value, trace }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_parabola_vertex() {
        let m = golden_section(|x: f64| (x - 1.3).powi(2) + 2.0, -4.0, 9.0, 1e-8);
        assert!((m.x - 1.3).abs() < 1e-7);
        assert!((m.value - 2.0).abs() < 1e-12);
        assert!(m.trace.len() > 10);
    }

    #[test]
    fn monotone_function_converges_to_edge() {
        let m = golden_section(|x: f32| x, 0.0, 1.0, 1e-4);
        assert!(m.x < 1e-3);
    }
}

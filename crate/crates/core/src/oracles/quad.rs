//! Adaptive Gauss-Lobatto quadrature with Kronrod error estimation
//! (Gander and Gautschi's `adaptlob` scheme).

use libm::sqrt;

/// Result of [`adaptive_lobatto`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    /// Sum of the local `|Kronrod - Lobatto|` differences over accepted panels.
    pub error: f64,
    pub evaluations: usize,
    /// False when some panel hit the depth limit before meeting `tol`.
    pub converged: bool,
}

const MAX_DEPTH: usize = 40;

struct State<'a, F> {
    f: &'a mut F,
    tol: f64,
    evals: usize,
    error: f64,
    converged: bool,
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` per panel.
pub fn adaptive_lobatto<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Quadrature {
    if a == b {
        return Quadrature { value: 0.0, error: 0.0, evaluations: 0, converged: true };
    }
    let fa = f(a);
    let fb = f(b);
    let mut st = State { f: &mut f, tol, evals: 2, error: 0.0, converged: true };
    let value = step(&mut st, a, b, fa, fb, 0);
    Quadrature { value, error: st.error, evaluations: st.evals, converged: st.converged }
}

fn step<F: FnMut(f64) -> f64>(st: &mut State<'_, F>, a: f64, b: f64, fa: f64, fb: f64, depth: usize) -> f64 {
    let alpha = sqrt(2.0 / 3.0);
    let beta = 1.0 / sqrt(5.0);
    let h = (b - a) / 2.0;
    let m = (a + b) / 2.0;
    let (mll, ml, mr, mrr) = (m - alpha * h, m - beta * h, m + beta * h, m + alpha * h);
    let fmll = (st.f)(mll);
    let fml = (st.f)(ml);
    let fm = (st.f)(m);
    let fmr = (st.f)(mr);
    let fmrr = (st.f)(mrr);
    st.evals += 5;
    let i2 = (h / 6.0) * (fa + fb + 5.0 * (fml + fmr));
    let i1 = (h / 1470.0) * (77.0 * (fa + fb) + 432.0 * (fmll + fmrr) + 625.0 * (fml + fmr) + 672.0 * fm);
    let diff = (i1 - i2).abs();
    let degenerate = mll <= a || b <= mrr;
    if diff <= st.tol || degenerate || depth >= MAX_DEPTH || !diff.is_finite() {
        if !(diff <= st.tol) {
            st.converged = false;
        }
        st.error += diff;
        return i1;
    }
    step(st, a, mll, fa, fmll, depth + 1)
        + step(st, mll, ml, fmll, fml, depth + 1)
        + step(st, ml, m, fml, fm, depth + 1)
        + step(st, m, mr, fm, fmr, depth + 1)
        + step(st, mr, mrr, fmr, fmrr, depth + 1)
        + step(st, mrr, b, fmrr, fb, depth + 1)
}

//! Bracketed one-dimensional maximization (Brent's method: golden section with
//! parabolic steps).

const GOLDEN: f64 = 0.381_966_011_250_105_1;

#[derive(Debug, Clone, Copy)]
pub struct BrentResult {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Maximizes `f` on `[lo, hi]`. Stops when the bracket half-width drops below
/// `tol` (absolute, in the units of `x`).
pub fn brent_max<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> BrentResult
where
    F: FnMut(f64) -> f64,
{
    // minimize the negation
    let mut g = |x: f64| -f(x);
    let (mut a, mut b) = if lo < hi { (lo, hi) } else { (hi, lo) };
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d = 0.0_f64;
    let mut e = 0.0_f64;
    let eps = f64::EPSILON.sqrt() * 1e-3;

    for iter in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = eps * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return BrentResult { x, value: -fx, iterations: iter, converged: true };
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if (u - a) < tol2 || (b - u) < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else if d > 0.0 { x + tol1 } else { x - tol1 };
        let fu = g(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    BrentResult { x, value: -fx, iterations: max_iter, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_parabola_peak() {
        let r = brent_max(|x| -(x - 1.3).powi(2), -5.0, 5.0, 1e-9, 200);
        assert!(r.converged);
        assert!((r.x - 1.3).abs() < 1e-7);
    }

    #[test]
    fn boundary_maximum() {
        let r = brent_max(|x| x, 0.0, 2.0, 1e-8, 200);
        assert!((r.x - 2.0).abs() < 1e-6);
    }

    #[test]
    fn flat_region_terminates() {
        let r = brent_max(|x| if x < 0.0 { 0.0 } else { -x * x }, -4.0, 3.0, 1e-8, 500);
        assert!(r.converged);
        assert!(r.value > -1e-12);
    }
}

//! Adaptive Simpson quadrature, used as the reference oracle for Fisher
//! information closed forms.

use super::density::ScalarDensity;

/// Trim applied to the endpoints of bounded supports, where `f'/f` diverges.
pub const ENDPOINT_TRIM: f64 = 1e-12;

const MAX_DEPTH: u32 = 48;
const INITIAL_PANELS: usize = 32;

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adapt(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
        + adapt(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson on a finite interval with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let h = (b - a) / INITIAL_PANELS as f64;
    let panel_tol = tol / INITIAL_PANELS as f64;
    (0..INITIAL_PANELS)
        .map(|i| {
            let lo = a + h * i as f64;
            let hi = if i + 1 == INITIAL_PANELS { b } else { lo + h };
            let (flo, fhi) = (f(lo), f(hi));
            let (m, fm, whole) = simpson(&f, lo, flo, hi, fhi);
            adapt(&f, lo, flo, hi, fhi, m, fm, whole, panel_tol, MAX_DEPTH)
        })
        .sum()
}

/// Integral over `[a, b]` where either endpoint may be infinite. Half-lines
/// are mapped to `[0, 1)` through `x = a + t / (1 - t)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    integrate_dyn(&f, a, b, tol)
}

fn integrate_dyn(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let t_end = 1.0 - ENDPOINT_TRIM;
    match (a.is_finite(), b.is_finite()) {
        (true, true) => adaptive_simpson(f, a, b, tol),
        (true, false) => adaptive_simpson(
            |t| {
                let s = 1.0 - t;
                f(a + t / s) / (s * s)
            },
            0.0,
            t_end,
            tol,
        ),
        (false, true) => adaptive_simpson(
            |t| {
                let s = 1.0 - t;
                f(b - t / s) / (s * s)
            },
            0.0,
            t_end,
            tol,
        ),
        (false, false) => {
            integrate_dyn(f, f64::NEG_INFINITY, 0.0, 0.5 * tol)
                + integrate_dyn(f, 0.0, f64::INFINITY, 0.5 * tol)
        }
    }
}

fn over_pieces<F: Fn(f64) -> f64>(d: &ScalarDensity, f: F, tol: f64) -> f64 {
    let pieces = d.pieces();
    let per = tol / pieces.len() as f64;
    pieces
        .iter()
        .map(|&(a, b)| {
            if d.is_bounded() {
                let trim = ENDPOINT_TRIM * (b - a);
                integrate(&f, a + trim, b - trim, per)
            } else {
                integrate(&f, a, b, per)
            }
        })
        .sum()
}

/// `∫ (f'/f)² f` over the support of a scalar density.
pub fn fisher_by_quadrature(d: &ScalarDensity) -> f64 {
    over_pieces(d, |x| d.fisher_integrand(x), 1e-11)
}

/// `∫ (1 + x f'/f)² f` over the support: Fisher information of the scale
/// parameter `u` in `z = D u`, at `u = 1`.
pub fn scale_fisher_by_quadrature(d: &ScalarDensity) -> f64 {
    over_pieces(d, |x| d.scale_fisher_integrand(x), 1e-11)
}

pub fn twin_scale_fisher_by_quadrature(center: f64, delta: f64) -> f64 {
    scale_fisher_by_quadrature(&ScalarDensity::TwinLobes { center, delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_exact() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12);
        assert!((v - 0.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_tail_integral() {
        let v = integrate(|x: f64| (-x * x / 2.0).exp(), f64::NEG_INFINITY, f64::INFINITY, 1e-12);
        assert!((v - (2.0 * PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn gaussian_fisher_is_inverse_variance() {
        let d = ScalarDensity::Gaussian { mean: 0.0, sd: 0.5 };
        assert!((fisher_by_quadrature(&d) - 4.0).abs() < 1e-8);
    }
}

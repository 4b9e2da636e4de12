//! Convolved scalar likelihoods `p = N(0, σ²) ⊛ noise` in closed form.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rustfft::FftPlanner;

const SQRT_PI: f64 = 1.772_453_850_905_516;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// `ln erfcx(u) = ln(e^{u²} erfc(u))` for `u ≥ 0`.
fn ln_erfcx_nonneg(u: f64) -> f64 {
    if u < 25.0 {
        libm::erfc(u).ln() + u * u
    } else {
        let v = 1.0 / (u * u);
        -(u * SQRT_PI).ln() + (1.0 - 0.5 * v + 0.75 * v * v - 1.875 * v * v * v).ln()
    }
}

/// `-x²/(2σ²) + ln erfcx(u)` computed without overflow for any sign of `u`,
/// where the caller guarantees `c - s·x/b - u² = -x²/(2σ²)`.
fn ln_term(x: f64, sigma: f64, b: f64, u: f64, sign: f64) -> f64 {
    if u >= 0.0 {
        -x * x / (2.0 * sigma * sigma) + ln_erfcx_nonneg(u)
    } else {
        sigma * sigma / (2.0 * b * b) + sign * x / b + libm::erfc(u).ln()
    }
}

/// Gaussian `N(0, σ²)` convolved with Laplace(0, b).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceGauss {
    pub sigma: f64,
    pub b: f64,
}

impl LaplaceGauss {
    /// `ln A` and `ln B` of `p(x) = (A + B) / (4b)`.
    fn ln_parts(&self, x: f64) -> (f64, f64) {
        let (s, b) = (self.sigma, self.b);
        let u1 = (s / b - x / s) / SQRT_2;
        let u2 = (s / b + x / s) / SQRT_2;
        (ln_term(x, s, b, u1, -1.0), ln_term(x, s, b, u2, 1.0))
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let (la, lb) = self.ln_parts(x);
        let top = la.max(lb);
        top + ((la - top).exp() + (lb - top).exp()).ln() - (4.0 * self.b).ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// `d/dx ln p(x) = -(1/b) tanh((ln A - ln B)/2)`.
    pub fn score(&self, x: f64) -> f64 {
        let (la, lb) = self.ln_parts(x);
        -((0.5 * (la - lb)).tanh()) / self.b
    }
}

const WEIDEMAN_N: usize = 32;

/// Coefficients of Weideman's rational approximation of the Faddeeva
/// function, lowest degree first.
fn weideman_coeffs() -> &'static (f64, [f64; WEIDEMAN_N]) {
    static COEFFS: OnceLock<(f64, [f64; WEIDEMAN_N])> = OnceLock::new();
    COEFFS.get_or_init(|| {
        let n = WEIDEMAN_N;
        let m = 2 * n;
        let m2 = 2 * m;
        let l = (n as f64 / SQRT_2).sqrt();
        // f on k = -M+1..M-1 with a leading zero, length 2M
        let mut f = vec![0.0; m2];
        for (idx, k) in (-(m as i64) + 1..m as i64).enumerate() {
            let t = l * (k as f64 * PI / (2.0 * m as f64)).tan();
            f[idx + 1] = (-t * t).exp() * (l * l + t * t);
        }
        // fftshift then forward FFT
        let mut buf: Vec<Complex64> = (0..m2).map(|i| Complex64::new(f[(i + m) % m2], 0.0)).collect();
        FftPlanner::new().plan_fft_forward(m2).process(&mut buf);
        let mut a = [0.0; WEIDEMAN_N];
        for (k, slot) in a.iter_mut().enumerate() {
            *slot = buf[k + 1].re / m2 as f64;
        }
        (l, a)
    })
}

/// Faddeeva function `w(z) = e^{-z²} erfc(-iz)` for `Im z ≥ 0`.
pub fn faddeeva(z: Complex64) -> Complex64 {
    let (l, a) = weideman_coeffs();
    let i = Complex64::i();
    let den = Complex64::new(*l, 0.0) - i * z;
    let zz = (Complex64::new(*l, 0.0) + i * z) / den;
    let mut p = Complex64::new(0.0, 0.0);
    for c in a.iter().rev() {
        p = p * zz + c;
    }
    2.0 * p / (den * den) + Complex64::new(1.0 / SQRT_PI, 0.0) / den
}

/// Gaussian `N(0, σ²)` convolved with Cauchy(0, γ): the Voigt profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voigt {
    pub sigma: f64,
    pub gamma: f64,
}

impl Voigt {
    fn arg(&self, x: f64) -> Complex64 {
        Complex64::new(x, self.gamma) / (self.sigma * SQRT_2)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        faddeeva(self.arg(x)).re / (self.sigma * (2.0 * PI).sqrt())
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.pdf(x).ln()
    }

    /// `d/dx ln p(x)` using `w'(z) = -2 z w(z) + 2i/√π`.
    pub fn score(&self, x: f64) -> f64 {
        let z = self.arg(x);
        let w = faddeeva(z);
        let dw = -2.0 * z * w + Complex64::new(0.0, 2.0 / SQRT_PI);
        dw.re / (self.sigma * SQRT_2) / w.re
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::density::ScalarDensity;
    use crate::fisher::quadrature::integrate;

    fn convolve(noise: ScalarDensity, sigma: f64, x: f64, scale: f64) -> f64 {
        let tol = 1e-11 * scale;
        let g = ScalarDensity::Gaussian { mean: 0.0, sd: sigma };
        let f = |t: f64| g.pdf(x - t) * noise.pdf(t);
        let pieces = [(f64::NEG_INFINITY, x.min(0.0)), (x.min(0.0), x.max(0.0)), (x.max(0.0), f64::INFINITY)];
        pieces.iter().map(|&(a, b)| integrate(f, a, b, tol)).sum()
    }

    #[test]
    fn laplace_gauss_matches_numeric_convolution() {
        for &(sigma, b) in &[(0.2, 1.0), (0.2, 0.1), (1.0, 0.3), (0.2, 3.0)] {
            let lg = LaplaceGauss { sigma, b };
            for &x in &[-4.0, -1.0, -0.05, 0.0, 0.3, 2.5, 7.0] {
                let num = convolve(ScalarDensity::Laplace { b }, sigma, x, lg.pdf(x));
                let rel = (lg.pdf(x) - num).abs() / num;
                assert!(rel < 1e-8, "σ={sigma} b={b} x={x}: {} vs {num}", lg.pdf(x));
            }
        }
    }

    #[test]
    fn laplace_gauss_score_matches_finite_difference() {
        let lg = LaplaceGauss { sigma: 0.2, b: 0.7 };
        for &x in &[-30.0, -2.0, -0.1, 0.0, 0.4, 3.0, 50.0] {
            let h = 1e-5;
            let fd = (lg.ln_pdf(x + h) - lg.ln_pdf(x - h)) / (2.0 * h);
            assert!((lg.score(x) - fd).abs() < 1e-6 * (1.0 + fd.abs()), "x={x}");
        }
    }

    #[test]
    fn laplace_gauss_far_tail_is_finite() {
        let lg = LaplaceGauss { sigma: 0.2, b: 1e-3 };
        for &x in &[-1e3, -5.0, 0.0, 5.0, 1e3] {
            assert!(lg.ln_pdf(x).is_finite() && lg.score(x).is_finite());
        }
        // b → 0 recovers the gaussian score
        assert!((lg.score(0.1) - (-0.1 / 0.04)).abs() < 0.01);
    }

    #[test]
    fn faddeeva_reference_values() {
        // w(i) = e erfc(1), w(iy) real
        let w = faddeeva(Complex64::new(0.0, 1.0));
        assert!((w.re - std::f64::consts::E * libm::erfc(1.0)).abs() < 1e-12);
        assert!(w.im.abs() < 1e-12);
        // on the real axis Re w(x) = e^{-x²}
        for &x in &[0.0, 0.5, 1.7, 3.0] {
            let w = faddeeva(Complex64::new(x, 0.0));
            assert!((w.re - (-x * x as f64).exp()).abs() < 1e-11, "x={x}");
        }
    }

    #[test]
    fn voigt_matches_numeric_convolution() {
        for &(sigma, gamma) in &[(0.2, 0.7), (0.2, 0.05), (1.0, 1.0), (0.2, 5.0)] {
            let v = Voigt { sigma, gamma };
            for &x in &[-20.0, -1.0, 0.0, 0.15, 3.0] {
                let num = convolve(ScalarDensity::Cauchy { gamma }, sigma, x, v.pdf(x));
                let rel = (v.pdf(x) - num).abs() / num;
                assert!(rel < 1e-8, "σ={sigma} γ={gamma} x={x}: {} vs {num}", v.pdf(x));
            }
        }
    }

    #[test]
    fn voigt_score_matches_finite_difference() {
        let v = Voigt { sigma: 0.2, gamma: 0.4 };
        for &x in &[-10.0, -0.3, 0.0, 0.2, 4.0] {
            let h = 1e-6;
            let fd = (v.ln_pdf(x + h) - v.ln_pdf(x - h)) / (2.0 * h);
            assert!((v.score(x) - fd).abs() < 1e-5 * (1.0 + fd.abs()), "x={x}");
        }
    }
}

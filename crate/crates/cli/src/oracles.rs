//! Closed-form and FFT reference solutions for the verification suites.
//! Nothing here calls the solver code paths it is used to check.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// e^{−σ²k²τ/2}: the heat multiplier of mode k over time τ.
pub fn heat_decay(sigma_sq: f64, k: f64, tau: f64) -> f64 {
    (-0.5 * sigma_sq * k * k * tau).exp()
}

/// Eigenvalue of (σ²/2)·D² on cos(kx) for the three-point stencil with step h.
pub fn stencil_heat_eigenvalue(sigma_sq: f64, k: f64, h: f64) -> f64 {
    let s = (0.5 * k * h).sin();
    -0.5 * sigma_sq * 4.0 * s * s / (h * h)
}

/// Samples of x on the periodic grid of n points over [−L, L).
pub fn nodes(n: usize, half_width: f64) -> Vec<f64> {
    let h = 2.0 * half_width / n as f64;
    (0..n).map(|i| -half_width + i as f64 * h).collect()
}

/// Heat semigroup e^{τσ²∂²/2} applied to periodic samples through the FFT.
pub fn heat_fft(values: &[f64], half_width: f64, sigma_sq: f64, tau: f64) -> Vec<f64> {
    let n = values.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    for (j, c) in buf.iter_mut().enumerate() {
        let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        *c *= heat_decay(sigma_sq, m * PI / half_width, tau);
    }
    inv.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Cole–Hopf solution of V_t + (σ²/2)V_xx + γ(V_x)² = 0 with V(T) = terminal:
/// V(t) = (σ²/(2γ))·log(e^{(T−t)σ²∂²/2} exp(2γV(T)/σ²)).
pub fn cole_hopf(terminal: &[f64], half_width: f64, sigma_sq: f64, gamma: f64, tau: f64) -> Vec<f64> {
    let c = 2.0 * gamma / sigma_sq;
    let w: Vec<f64> = terminal.iter().map(|v| (c * v).exp()).collect();
    heat_fft(&w, half_width, sigma_sq, tau).iter().map(|v| v.ln() / c).collect()
}

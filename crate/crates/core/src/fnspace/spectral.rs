use super::{Grid1D, ScalarField};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Angular wavenumbers in FFT order; the Nyquist mode is +πN/(2L).
pub fn wavenumbers(grid: Grid1D) -> Vec<f64> {
    let n = grid.n_points();
    let base = std::f64::consts::PI / grid.half_width();
    (0..n)
        .map(|m| {
            let signed = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
            signed * base
        })
        .collect()
}

/// Unnormalised forward DFT Σ_j v_j e^{−2πi mj/N}.
pub(crate) fn fft_forward(values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()).process(&mut buf));
    buf
}

/// Inverse DFT with 1/N normalisation, real part.
pub(crate) fn ifft_real(mut coeffs: Vec<Complex64>) -> Vec<f64> {
    let n = coeffs.len();
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n).process(&mut coeffs));
    coeffs.iter().map(|c| c.re / n as f64).collect()
}

/// Multiplies the Fourier coefficients of `f` by `m(k)` and transforms back.
pub fn apply_fourier_multiplier(f: &ScalarField, m: impl Fn(f64) -> Complex64) -> ScalarField {
    let ks = wavenumbers(f.grid());
    let mut coeffs = fft_forward(f.values());
    for (c, &k) in coeffs.iter_mut().zip(&ks) {
        *c *= m(k);
    }
    ScalarField::from_vec_unchecked(f.grid(), ifft_real(coeffs))
}

/// Fourier multiplier (ik)^order; the Nyquist mode is dropped for odd order.
pub fn spectral_derivative(f: &ScalarField, order: u8) -> ScalarField {
    let n = f.grid().n_points();
    let ks = wavenumbers(f.grid());
    let mut coeffs = fft_forward(f.values());
    for (m, c) in coeffs.iter_mut().enumerate() {
        let k = ks[m];
        *c *= match order {
            1 if m == n / 2 => Complex64::new(0.0, 0.0),
            1 => Complex64::new(0.0, k),
            _ => Complex64::new(-k * k, 0.0),
        };
    }
    ScalarField::from_vec_unchecked(f.grid(), ifft_real(coeffs))
}

/// F[f](k) = Σ_i f_i e^{−ik x_i} h, in FFT order.
pub fn fourier_transform(f: &ScalarField) -> Vec<Complex64> {
    let grid = f.grid();
    let h = grid.spacing();
    let ks = wavenumbers(grid);
    fft_forward(f.values())
        .into_iter()
        .zip(ks)
        .map(|(c, k)| c * Complex64::from_polar(h, k * grid.half_width()))
        .collect()
}

/// sup_k |F[δ](k)| / (1 + k²): a cheap screen equivalent to the (C²)* norm
/// up to grid-independent constants.
pub fn dual_norm_surrogate(delta: &ScalarField) -> f64 {
    let h = delta.grid().spacing();
    let ks = wavenumbers(delta.grid());
    fft_forward(delta.values())
        .iter()
        .zip(&ks)
        .fold(0.0, |m, (c, &k)| m.max(h * c.norm() / (1.0 + k * k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnspace::{derivative, make_grid, DerivativeMethod};
    use std::f64::consts::PI;

    #[test]
    fn spectral_derivative_of_cosine_is_exact() {
        let g = make_grid(32, PI).unwrap();
        let f = ScalarField::from_fn(g, f64::cos);
        let d1 = derivative(&f, 1, DerivativeMethod::Spectral).unwrap();
        let d2 = derivative(&f, 2, DerivativeMethod::Spectral).unwrap();
        assert!((&d1 - &ScalarField::from_fn(g, |x| -x.sin())).max_abs() < 1e-13);
        assert!((&d2 - &f.map(|v| -v)).max_abs() < 1e-13);
    }

    #[test]
    fn fourier_transform_of_single_mode() {
        // F[cos](±1) = π on [−π, π).
        let g = make_grid(64, PI).unwrap();
        let f = ScalarField::from_fn(g, f64::cos);
        let ft = fourier_transform(&f);
        assert!((ft[1].re - PI).abs() < 1e-12 && ft[1].im.abs() < 1e-12);
        assert!((ft[63].re - PI).abs() < 1e-12);
        assert!(ft[2].norm() < 1e-12);
        assert!((dual_norm_surrogate(&f) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_mode_transform_phase() {
        // F[sin(x)](1) = −iπ.
        let g = make_grid(16, PI).unwrap();
        let f = ScalarField::from_fn(g, f64::sin);
        let ft = fourier_transform(&f);
        assert!(ft[1].re.abs() < 1e-12 && (ft[1].im + PI).abs() < 1e-12);
    }

    #[test]
    fn wavenumbers_fft_order() {
        let g = make_grid(8, 2.0).unwrap();
        let ks = wavenumbers(g);
        let b = PI / 2.0;
        assert_eq!(ks, vec![0.0, b, 2.0 * b, 3.0 * b, 4.0 * b, -3.0 * b, -2.0 * b, -b]);
    }
}

//! Transforms, products, projections, the antiderivative, and the norms built
//! from them.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{CcmError, Result};
use crate::fft::{convolve, fft_in_place, ifft_in_place};
use crate::geometry::{Geometry, GeometryKind};
use crate::spectrum::{Offset, Side, Spectrum, I};
use crate::state::{full_band, HardyState};

/// Physical samples of the represented function on an m-point grid
/// (torus: x in [0, 2pi); line: x in [-L, L), state lattice antiperiodic).
pub fn synthesize_spectrum(geom: &Geometry, f: &Spectrum, m: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::default(); m];
    let line = !geom.is_torus();
    for (i, &v) in f.a.iter().enumerate() {
        let idx = f.lo + i as i64;
        let slot = idx.rem_euclid(m as i64) as usize;
        // on the line, x_j = -L + j*dx gives e^{i idx dxi x_j} = (-1)^idx e^{2pi i idx j / m}
        let s = if line && idx.rem_euclid(2) != 0 { -1.0 } else { 1.0 };
        buf[slot] += v * s;
    }
    ifft_in_place(&mut buf);
    let scale = geom.dxi() * m as f64;
    if line && f.off == Offset::Half {
        // half-lattice modulation: e^{i (1/2) dxi x_j} = -i e^{i pi j / m}
        for (j, v) in buf.iter_mut().enumerate() {
            let ph = Complex64::from_polar(1.0, PI * j as f64 / m as f64);
            *v *= scale * ph * Complex64::new(0.0, -1.0);
        }
    } else {
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
    buf
}

pub fn synthesize(q: &HardyState) -> Vec<Complex64> {
    synthesize_spectrum(&q.geometry, &q.spectrum(), q.geometry.grid_points)
}

/// Inverse of `synthesize_spectrum` onto the symmetric retained band.
pub fn analyze(samples: &[Complex64], geom: &Geometry) -> Result<Spectrum> {
    let m = samples.len();
    if m < 4 * geom.n_modes {
        return Err(CcmError::Dimension { expected: geom.grid_points, got: m });
    }
    let (lo, hi, off) = full_band(geom);
    let line = !geom.is_torus();
    let mut buf: Vec<Complex64> = samples.to_vec();
    if line && off == Offset::Half {
        for (j, v) in buf.iter_mut().enumerate() {
            let ph = Complex64::from_polar(1.0, -PI * j as f64 / m as f64);
            *v *= ph * Complex64::new(0.0, 1.0);
        }
    }
    fft_in_place(&mut buf);
    let scale = 1.0 / (geom.dxi() * m as f64);
    let mut a = vec![Complex64::default(); (hi - lo + 1) as usize];
    for idx in lo..=hi {
        let slot = idx.rem_euclid(m as i64) as usize;
        let s = if line && idx.rem_euclid(2) != 0 { -1.0 } else { 1.0 };
        a[(idx - lo) as usize] = buf[slot] * s * scale;
    }
    Ok(Spectrum::new(lo, off, a))
}

/// Alias-free product. Accepts any mix of lattices with consistent geometry.
pub fn multiply(geom: &Geometry, f: &Spectrum, g: &Spectrum) -> Spectrum {
    f.multiply(g, geom)
}

pub fn cauchy_szego(geom: &Geometry, f: &Spectrum, side: Side) -> Spectrum {
    f.clip(side, geom)
}

/// Torus antiderivative: Fourier multiplier (1 - delta_{n0}) / (i n).
pub fn antiderivative_torus(f: &Spectrum) -> Spectrum {
    let mut out = f.clone();
    for (i, v) in out.a.iter_mut().enumerate() {
        let n = f.lo + i as i64;
        if n == 0 {
            *v = Complex64::default();
        } else {
            *v /= I * n as f64;
        }
    }
    out
}

/// Line antiderivative on the physical grid: (1/2) sum_j sgn(x_i - x_j) f(x_j) dx,
/// evaluated with cumulative sums in O(grid).
pub fn antiderivative_line_samples(samples: &[Complex64], dx: f64) -> Vec<Complex64> {
    let n = samples.len();
    let mut prefix = Vec::with_capacity(n); // prefix[i] = sum_{j<=i} f_j dx
    let mut acc = Complex64::default();
    for &v in samples {
        acc += v * dx;
        prefix.push(acc);
    }
    let total = acc;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let below = if i == 0 { Complex64::default() } else { prefix[i - 1] };
        out.push(0.5 * (below + prefix[i] - total));
    }
    out
}

/// Exact sgn-kernel antiderivative of a trig interpolant on the window:
/// the zero-mean part by the 1/(i xi) multiplier anchored at x = -L, the mean
/// part as an explicit sawtooth. Returns (band-limited part, sawtooth slope).
pub fn antiderivative_line_spectral(geom: &Geometry, f: &Spectrum) -> (Spectrum, Complex64) {
    debug_assert_eq!(f.off, Offset::Int);
    let dxi = geom.dxi();
    let mut a = vec![Complex64::default(); f.a.len()];
    let mut edge = Complex64::default(); // A(-L) / dxi
    for (i, &v) in f.a.iter().enumerate() {
        let idx = f.lo + i as i64;
        if idx != 0 {
            let coeff = v / (I * (idx as f64) * dxi);
            a[i] = coeff;
            let parity = if idx.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            edge += coeff * parity;
        }
    }
    let mut out = Spectrum::new(f.lo, Offset::Int, a);
    // subtract the anchored constant A(-L) (as a density, the dxi factors cancel)
    let delta = Spectrum::new(0, Offset::Int, vec![-edge]);
    out.accumulate(&delta, Complex64::new(1.0, 0.0));
    let slope = f.get(0) * dxi; // amplitude of the constant part
    (out, slope)
}

/// Exact window-Fourier amplitudes of the sawtooth x on [-L, L):
/// x = sum_{r != 0} (-1)^{r+1} / (i r dxi) e^{i r dxi x}.
pub fn x_kernel(geom: &Geometry, band: i64) -> Vec<Complex64> {
    let dxi = geom.dxi();
    let mut a = vec![Complex64::default(); (2 * band + 1) as usize];
    for idx in -band..=band {
        if idx != 0 {
            let parity = if idx.rem_euclid(2) == 0 { -1.0 } else { 1.0 };
            a[(idx + band) as usize] = Complex64::new(parity, 0.0) / (I * idx as f64 * dxi);
        }
    }
    a
}

/// Exact Galerkin product x * f on the window (f on either lattice).
pub fn multiply_by_x(geom: &Geometry, f: &Spectrum, extra_band: i64) -> Spectrum {
    let band = f.a.len() as i64 + extra_band;
    let ker = x_kernel(geom, band);
    // x is a function (amplitude series): plain convolution, no dxi scale
    let conv = convolve(&ker, &f.conv_input());
    Spectrum::new(f.lo - band, f.off, conv)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormKind {
    L2,
    Hs(f64),
    Hdots(f64),
    L4,
    L6,
}

pub fn norm(q: &HardyState, kind: NormKind) -> f64 {
    let geom = &q.geometry;
    let w = geom.weight();
    match kind {
        NormKind::L2 => q.norm_l2(),
        NormKind::Hs(s) => {
            let mut acc = 0.0;
            for (k, c) in q.coeffs.iter().enumerate() {
                let xi = geom.state_freq(k);
                acc += (1.0 + xi * xi).powf(s) * c.norm_sqr();
            }
            (w * acc).sqrt()
        }
        NormKind::Hdots(s) => {
            let mut acc = 0.0;
            for (k, c) in q.coeffs.iter().enumerate() {
                let xi = geom.state_freq(k);
                if xi != 0.0 {
                    acc += xi.abs().powf(2.0 * s) * c.norm_sqr();
                }
            }
            (w * acc).sqrt()
        }
        NormKind::L4 => lp_norm(q, 4),
        NormKind::L6 => lp_norm(q, 6),
    }
}

/// ||q||_{L^p} by alias-free physical quadrature (grid chosen so the trig
/// polynomial |q|^p is integrated exactly).
fn lp_norm(q: &HardyState, p: u32) -> f64 {
    let geom = &q.geometry;
    let m = (p as usize * geom.n_modes + 2).next_power_of_two();
    let samples = synthesize_spectrum(geom, &q.spectrum(), m);
    let dx = geom.period() / m as f64;
    let sum: f64 = samples.iter().map(|z| z.norm().powi(p as i32)).sum();
    (sum * dx).powf(1.0 / p as f64)
}

/// Convenience: the spectrum of |q|^2 (exact convolution, integer lattice).
pub fn abs_squared(q: &HardyState) -> Spectrum {
    let s = q.spectrum();
    s.multiply(&s.conj_flip(), &q.geometry)
}

/// L^1 norm over the window by physical quadrature on an oversampled grid.
pub fn l1_norm(geom: &Geometry, f: &Spectrum, oversample: usize) -> f64 {
    let m = (oversample * (f.a.len() + 4)).next_power_of_two();
    let samples = synthesize_spectrum(geom, f, m);
    let dx = geom.period() / m as f64;
    samples.iter().map(|z| z.norm()).sum::<f64>() * dx
}

/// Check two states share a discretization.
pub fn check_same_geometry(a: &HardyState, b: &HardyState) -> Result<()> {
    if a.geometry.same_discretization(&b.geometry) {
        Ok(())
    } else {
        Err(CcmError::GeometryMismatch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Sign;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn torus_single_mode_synthesis() {
        let g = Geometry::torus(8);
        let mut q = HardyState::zero(g, Sign::Focusing);
        q.coeffs[1] = c(1.0, 0.0);
        let s = synthesize(&q);
        for (j, v) in s.iter().enumerate() {
            let x = g.grid_x(j, s.len());
            assert!((v - Complex64::from_polar(1.0, x)).norm() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_torus_and_line() {
        for g in [Geometry::torus(16), Geometry::line(16, 12.0)] {
            let coeffs: Vec<Complex64> =
                (0..16).map(|k| c(1.0 / (1 + k) as f64, 0.3 / (1 + k * k) as f64)).collect();
            let q = HardyState::new(g, Sign::Focusing, coeffs.clone()).unwrap();
            let s = synthesize(&q);
            let back = analyze(&s, &g).unwrap();
            for (k, want) in coeffs.iter().enumerate() {
                let got = back.get(k as i64);
                assert!(
                    (got - want).norm() <= 1e-12 * (1.0 + want.norm()),
                    "mode {k}: {got} vs {want}"
                );
            }
            // negative side of the analysis band is empty for a Hardy state
            for idx in full_band(&g).0..0 {
                assert!(back.get(idx).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_state_synthesizes_to_zero() {
        let g = Geometry::torus(8);
        let q = HardyState::zero(g, Sign::Defocusing);
        assert!(synthesize(&q).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn torus_antiderivative_multiplier() {
        // f = e^{ix} -> e^{ix} / i ; f = 1 -> 0
        let f = Spectrum::new(1, Offset::Int, vec![c(1.0, 0.0)]);
        let a = antiderivative_torus(&f);
        assert!((a.a[0] - c(1.0, 0.0) / I).norm() < 1e-15);
        let one = Spectrum::new(0, Offset::Int, vec![c(1.0, 0.0)]);
        assert!(antiderivative_torus(&one).a[0].norm() == 0.0);
    }

    #[test]
    fn line_prefix_sums_match_dense_quadrature() {
        // Gaussian bump against the direct O(n^2) double loop
        let g = Geometry::line(32, 8.0);
        let m = 256;
        let samples: Vec<Complex64> = (0..m)
            .map(|j| {
                let x = g.grid_x(j, m);
                c((-x * x / 2.0).exp(), 0.1 * (-x * x / 3.0).exp())
            })
            .collect();
        let dx = g.period() / m as f64;
        let fast = antiderivative_line_samples(&samples, dx);
        for i in (0..m).step_by(17) {
            let mut dense = Complex64::default();
            for j in 0..m {
                let s = (i as i64 - j as i64).signum() as f64;
                dense += 0.5 * s * samples[j] * dx;
            }
            assert!((fast[i] - dense).norm() < 1e-12);
        }
    }

    #[test]
    fn line_spectral_antiderivative_inverts_derivative() {
        // zero-mean band-limited F': spectral sgn antiderivative returns F - F(-L)
        let g = Geometry::line(8, 5.0);
        let f = Spectrum::new(-3, Offset::Int, (0..7).map(|i| c(0.3 * i as f64, 0.1)).collect());
        let fp = f.derivative(&g);
        let (u, slope) = antiderivative_line_spectral(&g, &fp);
        assert!(slope.norm() < 1e-15);
        // u should equal f - f(-L) as a function: compare samples
        let m = 128;
        let su = synthesize_spectrum(&g, &u, m);
        let sf = synthesize_spectrum(&g, &f, m);
        let f_edge = {
            // value at x = -L: sum a_idx (-1)^idx * dxi
            let mut v = Complex64::default();
            for (i, &av) in f.a.iter().enumerate() {
                let idx = f.lo + i as i64;
                let parity = if idx.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                v += av * parity;
            }
            v * g.dxi()
        };
        for j in (0..m).step_by(11) {
            assert!((su[j] - (sf[j] - f_edge)).norm() < 1e-11);
        }
    }

    #[test]
    fn plane_wave_norms_closed_form() {
        // q = c e^{ix}: ||q||^2_{Hdot 1/2} = 2pi|c|^2, ||q||^4_{L4} = 2pi |c|^4
        let g = Geometry::torus(8);
        let mut q = HardyState::zero(g, Sign::Focusing);
        q.coeffs[1] = c(0.7, 0.4);
        let c2 = q.coeffs[1].norm_sqr();
        let h = norm(&q, NormKind::Hdots(0.5));
        assert!((h * h - 2.0 * PI * c2).abs() < 1e-12);
        let l4 = norm(&q, NormKind::L4);
        assert!((l4.powi(4) - 2.0 * PI * c2 * c2).abs() < 1e-12);
    }
}

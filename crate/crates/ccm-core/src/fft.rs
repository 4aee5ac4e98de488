//! Thin rustfft wrapper with a per-thread planner cache and exact linear convolution.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::sync::Arc;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn rustfft::Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

pub fn fft_in_place(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

pub fn ifft_in_place(buf: &mut [Complex64]) {
    plan(buf.len(), true).process(buf);
    let s = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= s;
    }
}

/// Exact linear convolution of two coefficient vectors (output length a+b-1).
pub fn convolve(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 24 {
        let mut out = vec![Complex64::default(); out_len];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut fa = vec![Complex64::default(); n];
    let mut fb = vec![Complex64::default(); n];
    fa[..a.len()].copy_from_slice(a);
    fb[..b.len()].copy_from_slice(b);
    fft_in_place(&mut fa);
    fft_in_place(&mut fb);
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x *= y;
    }
    ifft_in_place(&mut fa);
    fa.truncate(out_len);
    fa
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_matches_direct() {
        let a: Vec<Complex64> = (0..40).map(|i| Complex64::new(i as f64, -(i as f64) / 3.0)).collect();
        let b: Vec<Complex64> = (0..33).map(|i| Complex64::new(1.0 / (1 + i) as f64, 0.2)).collect();
        let fast = convolve(&a, &b);
        let mut slow = vec![Complex64::default(); a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                slow[i + j] += x * y;
            }
        }
        for (f, s) in fast.iter().zip(slow.iter()) {
            assert!((f - s).norm() < 1e-9 * (1.0 + s.norm()));
        }
    }
}

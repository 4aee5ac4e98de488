//! Coefficient vectors over a frequency lattice (the working representation for
//! all intermediate products).
//!
//! A `Spectrum` stores density-convention coefficients a[i] attached to the
//! frequencies (lo + i + off) * dxi. On the torus dxi = 1 and off = 0 always.
//! On the line, Hardy states live on the staggered lattice (off = 1/2) and
//! products of a state with a conjugate state land on the integer lattice
//! (off = 0). A Cauchy-Szego clip on the integer lattice cuts the transform at
//! the xi = 0 node; that node then carries weight 1/2 in any subsequent
//! convolution (midpoint value of the jump), tracked by `clip0`.

use num_complex::Complex64;

use crate::fft::convolve;
use crate::geometry::Geometry;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Offset {
    Int,
    Half,
}

impl Offset {
    pub fn value(self) -> f64 {
        match self {
            Offset::Int => 0.0,
            Offset::Half => 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    pub lo: i64,
    pub off: Offset,
    pub a: Vec<Complex64>,
    pub clip0: bool,
}

impl Spectrum {
    pub fn new(lo: i64, off: Offset, a: Vec<Complex64>) -> Self {
        Spectrum { lo, off, a, clip0: false }
    }

    pub fn zero(off: Offset) -> Self {
        Spectrum { lo: 0, off, a: vec![Complex64::default()], clip0: false }
    }

    /// State vector on the geometry's retained lattice.
    pub fn from_state(geom: &Geometry, c: &[Complex64]) -> Self {
        let off = if geom.is_torus() { Offset::Int } else { Offset::Half };
        Spectrum { lo: 0, off, a: c.to_vec(), clip0: false }
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.a.len() as i64 - 1
    }

    pub fn get(&self, idx: i64) -> Complex64 {
        if idx >= self.lo && idx <= self.hi() {
            self.a[(idx - self.lo) as usize]
        } else {
            Complex64::default()
        }
    }

    pub fn freq(&self, idx: i64, geom: &Geometry) -> f64 {
        (idx as f64 + self.off.value()) * geom.dxi()
    }

    /// Truncate back to the retained state band [0, N-1] on the state lattice.
    pub fn to_state(&self, geom: &Geometry) -> Vec<Complex64> {
        let expect = if geom.is_torus() { Offset::Int } else { Offset::Half };
        debug_assert_eq!(self.off, expect, "lattice mismatch in to_state");
        (0..geom.n_modes as i64).map(|k| self.get(k)).collect()
    }

    pub fn conj_flip(&self) -> Spectrum {
        let a: Vec<Complex64> = self.a.iter().rev().map(|z| z.conj()).collect();
        let lo = match self.off {
            Offset::Int => -self.hi(),
            // -(k + 1/2) = (m + 1/2) with m = -k-1
            Offset::Half => -self.hi() - 1,
        };
        Spectrum { lo, off: self.off, a, clip0: self.clip0 }
    }

    /// Real part of the represented function: (f + conj(f))/2.
    pub fn re_part(&self) -> Spectrum {
        let c = self.conj_flip();
        let mut out = self.scaled(Complex64::new(0.5, 0.0));
        out.accumulate(&c, Complex64::new(0.5, 0.0));
        out.clip0 = self.clip0;
        out
    }

    pub fn scaled(&self, z: Complex64) -> Spectrum {
        let mut out = self.clone();
        for v in out.a.iter_mut() {
            *v *= z;
        }
        out
    }

    /// self += z * other (bands merged).
    pub fn accumulate(&mut self, other: &Spectrum, z: Complex64) {
        debug_assert_eq!(self.off, other.off, "lattice mismatch in accumulate");
        let lo = self.lo.min(other.lo);
        let hi = self.hi().max(other.hi());
        if lo < self.lo || hi > self.hi() {
            let mut a = vec![Complex64::default(); (hi - lo + 1) as usize];
            for (i, v) in self.a.iter().enumerate() {
                a[(self.lo - lo) as usize + i] = *v;
            }
            self.a = a;
            self.lo = lo;
        }
        for (i, v) in other.a.iter().enumerate() {
            self.a[(other.lo - self.lo) as usize + i] += z * *v;
        }
        self.clip0 = self.clip0 || other.clip0;
    }

    /// Derivative: multiply by i*xi.
    pub fn derivative(&self, geom: &Geometry) -> Spectrum {
        let mut out = self.clone();
        for (i, v) in out.a.iter_mut().enumerate() {
            let xi = (self.lo + i as i64) as f64 + self.off.value();
            *v *= I * (xi * geom.dxi());
        }
        out
    }

    /// Copy with the xi = 0 node halved when flagged (clip jump midpoint).
    pub fn conv_input(&self) -> Vec<Complex64> {
        let mut a = self.a.clone();
        if self.clip0 && self.off == Offset::Int && self.lo <= 0 && self.hi() >= 0 {
            a[(-self.lo) as usize] *= 0.5;
        }
        a
    }

    /// Alias-free product of the represented functions: dxi-scaled exact
    /// convolution of coefficients, with clip-node midpoint weights on the line.
    pub fn multiply(&self, other: &Spectrum, geom: &Geometry) -> Spectrum {
        let fa = self.conv_input();
        let ga = other.conv_input();
        let mut conv = convolve(&fa, &ga);
        let dxi = geom.dxi();
        for v in conv.iter_mut() {
            *v *= dxi;
        }
        let mut lo = self.lo + other.lo;
        let off = match (self.off, other.off) {
            (Offset::Int, Offset::Int) => Offset::Int,
            (Offset::Half, Offset::Half) => {
                lo += 1; // (k+1/2)+(l+1/2) = (k+l+1)
                Offset::Int
            }
            _ => Offset::Half,
        };
        Spectrum { lo, off, a: conv, clip0: false }
    }

    /// Cauchy-Szego clip. Torus: Plus keeps xi >= 0, Minus keeps xi <= 0 (the
    /// zero mode belongs to both, per the circle identity C+ + C- = 1 + P_0).
    /// Line integer lattice: both sides keep the xi = 0 node with the jump flag
    /// set, so that C+ + C- = 1 holds in the midpoint-weight semantics.
    /// Line half lattice: a clean cut (no node sits at 0).
    pub fn clip(&self, side: Side, geom: &Geometry) -> Spectrum {
        let keep_lo;
        let keep_hi;
        match side {
            Side::Plus => {
                keep_lo = match self.off {
                    Offset::Int => 0,
                    Offset::Half => 0,
                };
                keep_hi = self.hi();
            }
            Side::Minus => {
                keep_lo = self.lo;
                keep_hi = match self.off {
                    Offset::Int => 0,
                    Offset::Half => -1,
                };
            }
        }
        let lo = self.lo.max(keep_lo);
        let hi = self.hi().min(keep_hi);
        if hi < lo {
            let mut z = Spectrum::zero(self.off);
            z.clip0 = false;
            return z;
        }
        let a = self.a[(lo - self.lo) as usize..=(hi - self.lo) as usize].to_vec();
        let clip0 = if geom.is_torus() {
            false
        } else {
            // the cut lands on the integer-lattice node 0
            self.off == Offset::Int
        };
        Spectrum { lo, off: self.off, a, clip0: clip0 || self.clip0 }
    }

    /// <f, g> = 2*pi*dxi * sum conj(f) g with midpoint weight at a flagged node.
    pub fn inner(&self, other: &Spectrum, geom: &Geometry) -> Complex64 {
        debug_assert_eq!(self.off, other.off);
        let lo = self.lo.max(other.lo);
        let hi = self.hi().min(other.hi());
        let mut s = Complex64::default();
        for idx in lo..=hi {
            let mut term = self.get(idx).conj() * other.get(idx);
            if idx == 0 && self.off == Offset::Int && (self.clip0 || other.clip0) {
                term *= 0.5;
            }
            s += term;
        }
        s * geom.weight()
    }

    pub fn norm(&self, geom: &Geometry) -> f64 {
        self.inner(self, geom).re.max(0.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

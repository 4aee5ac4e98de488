//! The Lax operator L_q = -i d/dx -+ q C+ qbar as a dense Hermitian matrix on
//! the retained Hardy basis, with resolvents, the generating function beta, the
//! conserved quantities E_n, and the operator-theoretic diagnostics.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{CcmError, Result};
use crate::geometry::{Geometry, Sign, M_STAR};
use crate::spectrum::{Side, Spectrum};
use crate::state::HardyState;

const HERMITICITY_TOL: f64 = 1e-12;

pub fn cplx(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Apply L_q to a coefficient vector, alias-free, truncated to the state band.
pub fn apply_lax(q: &HardyState, f: &[Complex64]) -> Vec<Complex64> {
    let geom = &q.geometry;
    let qs = q.spectrum();
    let fs = Spectrum::from_state(geom, f);
    let u = qs.conj_flip().multiply(&fs, geom);
    let v = qs.multiply(&u.clip(Side::Plus, geom), geom).to_state(geom);
    let upper = q.sign.upper();
    (0..geom.n_modes)
        .map(|k| cplx(geom.state_freq(k)) * f[k] - cplx(upper) * v[k])
        .collect()
}

#[derive(Clone, Debug)]
pub struct LaxMatrix {
    pub geometry: Geometry,
    pub sign: Sign,
    pub mat: DMatrix<Complex64>,
    pub source_mass: f64,
}

#[derive(Clone, Debug)]
pub struct ResolventVector {
    pub kappa: f64,
    pub m: Vec<Complex64>,
    pub beta: f64,
}

impl LaxMatrix {
    /// Columns are analyze(L_q e_k) with alias-free products; Hermiticity is asserted.
    pub fn build(q: &HardyState) -> Result<Self> {
        let n = q.n();
        let mut mat = DMatrix::<Complex64>::zeros(n, n);
        let mut e = vec![Complex64::default(); n];
        for j in 0..n {
            e[j] = cplx(1.0);
            let col = apply_lax(q, &e);
            for i in 0..n {
                mat[(i, j)] = col[i];
            }
            e[j] = Complex64::default();
        }
        let lax = LaxMatrix { geometry: q.geometry, sign: q.sign, mat, source_mass: q.mass() };
        let defect = lax.hermiticity_defect();
        let scale = lax.mat.iter().map(|z| z.norm()).fold(1.0, f64::max);
        if defect > HERMITICITY_TOL * scale {
            return Err(CcmError::NotHermitian { defect });
        }
        Ok(lax)
    }

    pub fn n(&self) -> usize {
        self.mat.nrows()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let adj = self.mat.adjoint();
        (&self.mat - adj).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn shifted(&self, kappa: f64) -> DMatrix<Complex64> {
        let n = self.n();
        &self.mat + DMatrix::<Complex64>::identity(n, n) * cplx(kappa)
    }

    /// Refuse focusing states at or above the mass threshold.
    pub fn ensure_invertible(&self) -> Result<()> {
        if self.sign == Sign::Focusing && self.source_mass >= M_STAR * (1.0 - 1e-6) {
            return Err(CcmError::ThresholdViolation { mass: self.source_mass });
        }
        Ok(())
    }

    pub fn solve(&self, kappa: f64, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        let lu = self.shifted(kappa).lu();
        let b = DVector::from_column_slice(rhs);
        match lu.solve(&b) {
            Some(x) => Ok(x.iter().copied().collect()),
            None => Err(CcmError::SolveFailed),
        }
    }

    /// m_kappa = (L_q + kappa)^{-1} q and beta = <q, m>.
    pub fn resolve(&self, q: &HardyState, kappa: f64) -> Result<ResolventVector> {
        self.ensure_invertible()?;
        let m = self.solve(kappa, &q.coeffs)?;
        let mst = q.with_coeffs(m.clone());
        let beta = q.inner(&mst)?.re;
        Ok(ResolventVector { kappa, m, beta })
    }

    /// d beta / d kappa = -<q, (L_q+kappa)^{-2} q> = -||m||^2.
    pub fn beta_dk(&self, q: &HardyState, kappa: f64) -> Result<f64> {
        let r = self.resolve(q, kappa)?;
        let m = q.with_coeffs(r.m);
        Ok(-m.mass())
    }

    /// [E_0, ..., E_nmax] with E_n = <q, L_q^n q>.
    pub fn energies(&self, q: &HardyState, n_max: usize) -> Vec<f64> {
        let w = q.geometry.weight();
        let mut v = DVector::from_column_slice(&q.coeffs);
        let q0 = DVector::from_column_slice(&q.coeffs);
        let mut out = Vec::with_capacity(n_max + 1);
        for _ in 0..=n_max {
            out.push((q0.dotc(&v) * cplx(w)).re);
            v = &self.mat * v;
        }
        out
    }

    /// Hermitian eigendecomposition (ascending eigenvalues).
    pub fn eigh(&self) -> (Vec<f64>, DMatrix<Complex64>) {
        let se = self.mat.clone().symmetric_eigen();
        let mut idx: Vec<usize> = (0..se.eigenvalues.len()).collect();
        idx.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
        let vals: Vec<f64> = idx.iter().map(|&i| se.eigenvalues[i]).collect();
        let n = self.n();
        let mut vecs = DMatrix::<Complex64>::zeros(n, n);
        for (col, &i) in idx.iter().enumerate() {
            vecs.set_column(col, &se.eigenvectors.column(i));
        }
        (vals, vecs)
    }

    /// Apply an arbitrary real function of L_q through the functional calculus.
    pub fn apply_function(&self, f: impl Fn(f64) -> f64, v: &[Complex64]) -> Vec<Complex64> {
        let (vals, vecs) = self.eigh();
        let x = DVector::from_column_slice(v);
        let y = vecs.adjoint() * x;
        let scaled = DVector::from_iterator(self.n(), y.iter().enumerate().map(|(i, z)| z * cplx(f(vals[i]))));
        (vecs * scaled).iter().copied().collect()
    }

    /// <q, (L_q+1)^2 / ((L_q+1)^2 + vk^2) q>: the equicontinuity functional.
    pub fn equicontinuity_functional(&self, q: &HardyState, vk: f64) -> f64 {
        let (vals, vecs) = self.eigh();
        let x = DVector::from_column_slice(&q.coeffs);
        let y = vecs.adjoint() * x;
        let w = q.geometry.weight();
        let mut acc = 0.0;
        for (i, z) in y.iter().enumerate() {
            let a = (vals[i] + 1.0).powi(2);
            acc += a / (a + vk * vk) * z.norm_sqr();
        }
        w * acc
    }

    /// (||L_q m||, ||kappa L_q (L_q+kappa)^{-1} m||): both decay as kappa grows
    /// on equicontinuous data.
    pub fn decay_diagnostics(&self, q: &HardyState, kappa: f64) -> Result<(f64, f64)> {
        let r = self.resolve(q, kappa)?;
        let lm: Vec<Complex64> = {
            let m = DVector::from_column_slice(&r.m);
            (&self.mat * m).iter().copied().collect()
        };
        let a = q.with_coeffs(lm.clone()).norm_l2();
        let rlm = self.solve(kappa, &lm)?;
        let b = kappa * q.with_coeffs(rlm).norm_l2();
        Ok((a, b))
    }

    /// ||(L_q+kappa)^s f|| / ||(L_0+kappa)^s f|| via the functional calculus.
    pub fn sobolev_ratio(&self, f: &[Complex64], s: f64, kappa: f64) -> Result<f64> {
        self.ensure_invertible()?;
        let num = self.apply_function(|x| (x + kappa).powf(s), f);
        let geom = self.geometry;
        let mut den = 0.0;
        let mut nume = 0.0;
        for (k, (a, b)) in num.iter().zip(f.iter()).enumerate() {
            let xi = geom.state_freq(k);
            nume += a.norm_sqr();
            den += ((xi + kappa).powf(s) * b.norm()).powi(2);
        }
        Ok((nume / den).sqrt())
    }
}

/// S(q) = C+ qbar (L_0+kappa)^{-1/2} on the retained basis. The output of
/// C+ qbar lives on the integer lattice; on the line its clipped xi=0 node
/// carries weight 1/2, absorbed here into orthonormal coordinates (row 0).
pub fn build_s(q: &HardyState, kappa: f64) -> DMatrix<Complex64> {
    let n = q.n();
    let geom = &q.geometry;
    let mut s = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        let scale = cplx(1.0 / (geom.state_freq(j) + kappa).sqrt());
        // C+(qbar e_j): coefficient at output node i is conj(c_{j-i})
        for i in 0..=j {
            s[(i, j)] = q.coeffs[j - i].conj() * scale;
        }
    }
    if !geom.is_torus() {
        let w = cplx(0.5f64.sqrt());
        for j in 0..n {
            s[(0, j)] *= w;
        }
    }
    s
}

/// T(q,g) = q C+ gbar (L_0+kappa)^{-1} on the retained basis.
pub fn build_t(q: &HardyState, g: &HardyState, kappa: f64) -> DMatrix<Complex64> {
    let n = q.n();
    let geom = &q.geometry;
    let qs = q.spectrum();
    let gs = g.spectrum();
    let mut t = DMatrix::<Complex64>::zeros(n, n);
    let mut e = vec![Complex64::default(); n];
    for j in 0..n {
        e[j] = cplx(1.0 / (geom.state_freq(j) + kappa));
        let fs = Spectrum::from_state(geom, &e);
        let u = gs.conj_flip().multiply(&fs, geom);
        let col = qs.multiply(&u.clip(Side::Plus, geom), geom).to_state(geom);
        for i in 0..n {
            t[(i, j)] = col[i];
        }
        e[j] = Complex64::default();
    }
    t
}

/// Operator norm squared of S(q) (largest singular value squared).
pub fn s_opnorm_sq(q: &HardyState, kappa: f64) -> f64 {
    let s = build_s(q, kappa);
    let sts = s.adjoint() * &s;
    let e = sts.symmetric_eigen();
    e.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b))
}

/// Hilbert-Schmidt norm of T(q,g).
pub fn t_hsnorm(q: &HardyState, g: &HardyState, kappa: f64) -> f64 {
    build_t(q, g, kappa).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Spectra of T(q,q), T(q,q)^*, S^*S and SS^* (all real up to truncation noise),
/// each returned sorted ascending by real part.
pub struct SstSpectra {
    pub t: Vec<f64>,
    pub t_star: Vec<f64>,
    pub sts: Vec<f64>,
    pub sst: Vec<f64>,
}

pub fn sst_spectrum(q: &HardyState, kappa: f64) -> SstSpectra {
    let s = build_s(q, kappa);
    let t = build_t(q, q, kappa);
    let herm_eigs = |m: DMatrix<Complex64>| -> Vec<f64> {
        let mut v: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    };
    let sts = herm_eigs(s.adjoint() * &s);
    let sst = herm_eigs(&s * s.adjoint());
    // T is not Hermitian; its spectrum is real (it matches sigma(SS^*)).
    // Use the real 2n x 2n representation, whose spectrum is sigma(T) united
    // with its conjugate, and read off the real parts in pairs.
    let complex_eigs = |m: &DMatrix<Complex64>| -> Vec<f64> {
        let n = m.nrows();
        let mut r = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                r[(i, j)] = m[(i, j)].re;
                r[(i, j + n)] = -m[(i, j)].im;
                r[(i + n, j)] = m[(i, j)].im;
                r[(i + n, j + n)] = m[(i, j)].re;
            }
        }
        let eig = r.schur().complex_eigenvalues();
        let mut v: Vec<f64> = eig.iter().map(|z| z.re).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // doubled spectrum: take every second entry
        v.into_iter().step_by(2).collect()
    };
    let tt = complex_eigs(&t);
    let tst = complex_eigs(&t.adjoint());
    SstSpectra { t: tt, t_star: tst, sts, sst }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TWO_PI;
    use crate::presets;

    #[test]
    fn lax_of_zero_is_frequency_diagonal() {
        for g in [Geometry::torus(8), Geometry::line(8, 6.0)] {
            let q = HardyState::zero(g, Sign::Focusing);
            let lax = LaxMatrix::build(&q).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    let want = if i == j { g.state_freq(i) } else { 0.0 };
                    assert!((lax.mat[(i, j)] - cplx(want)).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn resolvent_of_zero_state() {
        let g = Geometry::torus(8);
        let q = HardyState::zero(g, Sign::Focusing);
        let lax = LaxMatrix::build(&q).unwrap();
        let r = lax.resolve(&q, 2.0).unwrap();
        assert!(r.beta.abs() < 1e-15);
        assert!(r.m.iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn defocusing_plane_wave_eigenrelation() {
        // q_m = sqrt(2m) e^{imx}: L_q q = 3m q, beta(kappa) = 4 pi m/(3m+kappa)
        let g = Geometry::torus(24);
        for m in [1usize, 2, 3] {
            let q = presets::plane_wave(g, Sign::Defocusing, cplx((2.0 * m as f64).sqrt()), m).unwrap();
            let lax = LaxMatrix::build(&q).unwrap();
            let lq = apply_lax(&q, &q.coeffs);
            let resid: f64 = lq
                .iter()
                .zip(q.coeffs.iter())
                .map(|(a, b)| (a - b * cplx(3.0 * m as f64)).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(resid < 1e-12, "m={m}: {resid}");
            for kappa in [2.0, 5.0] {
                let r = lax.resolve(&q, kappa).unwrap();
                let want = 4.0 * std::f64::consts::PI * m as f64 / (3.0 * m as f64 + kappa);
                assert!((r.beta - want).abs() < 1e-10);
            }
            // E_n = (3m)^n * 4 pi m
            let e = lax.energies(&q, 3);
            for (n, en) in e.iter().enumerate() {
                let want = (3.0 * m as f64).powi(n as i32) * 4.0 * std::f64::consts::PI * m as f64;
                assert!((en - want).abs() < 1e-9 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn focusing_threshold_is_refused() {
        let g = Geometry::torus(16);
        // q == 1 has mass exactly 2 pi
        let mut q = HardyState::zero(g, Sign::Focusing);
        q.coeffs[0] = cplx(1.0);
        let lax = LaxMatrix::build(&q).unwrap();
        match lax.resolve(&q, 2.0) {
            Err(CcmError::ThresholdViolation { .. }) => {}
            other => panic!("expected threshold violation, got {other:?}"),
        }
    }

    #[test]
    fn generating_function_partial_sums() {
        let g = Geometry::torus(32);
        let q = presets::soliton_torus(g, 2).unwrap().scaled(cplx(0.4));
        let lax = LaxMatrix::build(&q).unwrap();
        let kappa = 64.0;
        let r = lax.resolve(&q, kappa).unwrap();
        let e = lax.energies(&q, 6);
        let mut partial = 0.0;
        for (n, en) in e.iter().enumerate() {
            partial += (-1.0f64).powi(n as i32) * kappa.powi(-(n as i32) - 1) * en;
        }
        // agreement to the truncation order of the expansion
        let next = e[6] / kappa.powi(8);
        assert!((r.beta - partial).abs() < 20.0 * next.abs() + 1e-13);
    }

    #[test]
    fn equicontinuity_functional_properties() {
        let g = Geometry::torus(24);
        let q0 = HardyState::zero(g, Sign::Focusing);
        let lax0 = LaxMatrix::build(&q0).unwrap();
        assert!(lax0.equicontinuity_functional(&q0, 4.0).abs() < 1e-15);
        let q = presets::soliton_torus(g, 2).unwrap().scaled(cplx(0.5));
        let lax = LaxMatrix::build(&q).unwrap();
        let mut prev = f64::INFINITY;
        for vk in [2.0, 4.0, 8.0, 16.0, 64.0] {
            let v = lax.equicontinuity_functional(&q, vk);
            assert!(v >= -1e-14 && v <= q.mass() + 1e-12);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn soliton_mass_and_eigenrelation_smoke() {
        let gt = Geometry::torus(64);
        let q = presets::soliton_torus(gt, 3).unwrap();
        assert!((q.mass() - TWO_PI).abs() < 1e-8);
        let lq = apply_lax(&q, &q.coeffs);
        let resid: f64 = lq
            .iter()
            .zip(q.coeffs.iter())
            .map(|(a, b)| (a + b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(resid / q.norm_l2() < 1e-7);
    }
}

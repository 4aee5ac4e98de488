//! Real-linear symplectic machinery: Theta(q), Omega(q), J(q), the form omega,
//! Poisson brackets, symplectic gradients of all tracked functionals, and the
//! degeneracy analysis at the mass threshold.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{CcmError, Result};
use crate::geometry::{Geometry, Sign, M_STAR, TWO_PI};
use crate::lax::{apply_lax, cplx, LaxMatrix};
use crate::spectral::{antiderivative_line_spectral, antiderivative_torus, multiply_by_x};
use crate::spectrum::{Side, Spectrum, I};
use crate::state::HardyState;

const PI: f64 = std::f64::consts::PI;

/// Theta(q)g = i q dtilde^{-1} Re(qbar g); function-level (untruncated band).
pub fn theta_apply(q: &HardyState, g: &Spectrum) -> Spectrum {
    let geom = &q.geometry;
    let qs = q.spectrum();
    let rho = qs.conj_flip().multiply(g, geom).re_part();
    theta_tail(q, &rho)
}

/// Analytic directional derivative of Theta at q in direction f, applied to g:
/// i f dtilde^{-1} Re(qbar g) + i q dtilde^{-1} Re(fbar g).
pub fn theta_derivative(q: &HardyState, f: &HardyState, g: &Spectrum) -> Spectrum {
    let geom = &q.geometry;
    let qs = q.spectrum();
    let fs = f.spectrum();
    let rho_q = qs.conj_flip().multiply(g, geom).re_part();
    let rho_f = fs.conj_flip().multiply(g, geom).re_part();
    let mut out = theta_tail(f, &rho_q);
    out.accumulate(&theta_tail(q, &rho_f), cplx(1.0));
    out
}

/// i * w * dtilde^{-1}(rho) for a real integer-lattice rho, with the line's
/// sawtooth mean part handled exactly.
fn theta_tail(w: &HardyState, rho: &Spectrum) -> Spectrum {
    let geom = &w.geometry;
    let ws = w.spectrum();
    if geom.is_torus() {
        let u = antiderivative_torus(rho);
        ws.multiply(&u, geom).scaled(I)
    } else {
        let (u, slope) = antiderivative_line_spectral(geom, rho);
        let mut out = ws.multiply(&u, geom);
        if slope.norm() > 0.0 {
            let xw = multiply_by_x(geom, &ws, geom.n_modes as i64 + 8);
            out.accumulate(&xw, slope);
        }
        out.scaled(I)
    }
}

/// Omega(q)g = i(1 -+ 2 C+ Theta(q))g on the retained band.
pub fn omega_apply(q: &HardyState, g: &[Complex64]) -> Vec<Complex64> {
    let geom = &q.geometry;
    let gs = Spectrum::from_state(geom, g);
    let th = theta_apply(q, &gs).clip(Side::Plus, geom).to_state(geom);
    let upper = q.sign.upper();
    g.iter()
        .zip(th.iter())
        .map(|(gv, tv)| I * (gv - cplx(2.0 * upper) * tv))
        .collect()
}

/// omega_q(f, g) = Re <f, Omega(q) g>.
pub fn omega_form(q: &HardyState, f: &HardyState, g: &HardyState) -> Result<f64> {
    crate::spectral::check_same_geometry(q, f)?;
    crate::spectral::check_same_geometry(q, g)?;
    let og = q.with_coeffs(omega_apply(q, &g.coeffs));
    Ok(f.inner(&og)?.re)
}

/// A real-linear map g -> A g + B conj(g) stored as a pair of complex matrices.
#[derive(Clone, Debug)]
pub struct RealLinearOperator {
    pub a: DMatrix<Complex64>,
    pub b: DMatrix<Complex64>,
}

impl RealLinearOperator {
    pub fn from_apply(n: usize, mut apply: impl FnMut(&[Complex64]) -> Vec<Complex64>) -> Self {
        let mut a = DMatrix::<Complex64>::zeros(n, n);
        let mut b = DMatrix::<Complex64>::zeros(n, n);
        let mut e = vec![Complex64::default(); n];
        for j in 0..n {
            e[j] = cplx(1.0);
            let t1 = apply(&e);
            e[j] = I;
            let t2 = apply(&e);
            e[j] = Complex64::default();
            for i in 0..n {
                a[(i, j)] = 0.5 * (t1[i] - I * t2[i]);
                b[(i, j)] = 0.5 * (t1[i] + I * t2[i]);
            }
        }
        RealLinearOperator { a, b }
    }

    pub fn apply(&self, g: &[Complex64]) -> Vec<Complex64> {
        let x = DVector::from_column_slice(g);
        let xc = DVector::from_iterator(g.len(), g.iter().map(|z| z.conj()));
        let y = &self.a * x + &self.b * xc;
        y.iter().copied().collect()
    }

    /// 2N x 2N real matrix on stacked [Re; Im] coordinates.
    pub fn real_rep(&self) -> DMatrix<f64> {
        let n = self.a.nrows();
        let mut r = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let apb = self.a[(i, j)] + self.b[(i, j)];
                let amb = self.a[(i, j)] - self.b[(i, j)];
                r[(i, j)] = apb.re;
                r[(i, j + n)] = -amb.im;
                r[(i + n, j)] = apb.im;
                r[(i + n, j + n)] = amb.re;
            }
        }
        r
    }

    /// Norm of the composition with itself (nilpotency witness for Theta).
    pub fn compose_norm(&self) -> f64 {
        let n = self.a.nrows();
        let mut worst = 0.0f64;
        let mut e = vec![Complex64::default(); n];
        for j in 0..n {
            e[j] = cplx(1.0);
            let once = self.apply(&e);
            let twice = self.apply(&once);
            worst = worst.max(twice.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt());
            e[j] = Complex64::default();
        }
        worst
    }
}

/// Theta(q) as an N x N real-linear operator on the retained band.
pub fn theta_op(q: &HardyState) -> RealLinearOperator {
    let geom = q.geometry;
    RealLinearOperator::from_apply(q.n(), move |g| {
        let gs = Spectrum::from_state(&geom, g);
        theta_apply(q, &gs).clip(Side::Plus, &geom).to_state(&geom)
    })
}

/// Omega(q) as an N x N real-linear operator.
pub fn omega_op(q: &HardyState) -> RealLinearOperator {
    RealLinearOperator::from_apply(q.n(), move |g| omega_apply(q, g))
}

/// J(q) = Omega(q)^{-1}, held as an LU factorization of the real representation.
pub struct JMap {
    n: usize,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl JMap {
    pub fn build(q: &HardyState) -> Result<Self> {
        if q.sign == Sign::Focusing && q.mass() >= M_STAR * (1.0 - 1e-6) {
            let (smin, _) = omega_sigma_extremes(q, 40)?;
            return Err(CcmError::DegenerateForm { sigma_min: smin });
        }
        let r = omega_op(q).real_rep();
        let lu = r.lu();
        Ok(JMap { n: q.n(), lu })
    }

    pub fn apply(&self, g: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut rhs = DVector::<f64>::zeros(2 * self.n);
        for (i, z) in g.iter().enumerate() {
            rhs[i] = z.re;
            rhs[i + self.n] = z.im;
        }
        let sol = self.lu.solve(&rhs).ok_or(CcmError::SolveFailed)?;
        Ok((0..self.n).map(|i| Complex64::new(sol[i], sol[i + self.n])).collect())
    }
}

/// Smallest/largest singular value of Omega(q) in the real representation.
/// Exact SVD up to dimension 600; shifted inverse iteration beyond.
pub fn omega_sigma_extremes(q: &HardyState, iters: usize) -> Result<(f64, f64)> {
    let r = omega_op(q).real_rep();
    sigma_extremes(&r, iters)
}

pub fn sigma_extremes(r: &DMatrix<f64>, iters: usize) -> Result<(f64, f64)> {
    let dim = r.nrows();
    if dim <= 600 {
        let svd = r.clone().svd(false, false);
        let smin = svd.singular_values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
        return Ok((smin, smax));
    }
    // power iteration on R^T R for sigma_max
    let mut v = pseudo_vector(dim, 0x9e3779b9);
    let mut smax = 0.0;
    for _ in 0..iters {
        let w = r.transpose() * (r * &v);
        smax = w.norm().sqrt();
        v = &w / w.norm();
    }
    // inverse iteration on (R^T R)^{-1} for the sigma_min direction
    let v_min = sigma_min_vector(r, iters);
    let smin = match &v_min {
        Some(u) => (r * u).norm(),
        None => 0.0,
    };
    Ok((smin, smax))
}

fn pseudo_vector(dim: usize, salt: u64) -> DVector<f64> {
    let mut state = salt | 1;
    let mut v = DVector::<f64>::from_fn(dim, |_, _| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
    });
    let n = v.norm();
    v /= n;
    v
}

/// Right-singular vector for the smallest singular value, by inverse iteration.
fn sigma_min_vector(r: &DMatrix<f64>, iters: usize) -> Option<DVector<f64>> {
    let lu = r.clone().lu();
    let lut = r.transpose().lu();
    let mut u = pseudo_vector(r.nrows(), 0x2545f491);
    for _ in 0..iters {
        let w1 = lu.solve(&u)?;
        let w2 = lut.solve(&w1)?;
        let n = w2.norm();
        if !n.is_finite() || n == 0.0 {
            return None;
        }
        u = w2 / n;
    }
    Some(u)
}

/// Degeneracy analysis report for Omega(q).
#[derive(Clone, Debug)]
pub struct DegeneracyReport {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub kernel: Option<Vec<Complex64>>,
    /// norm of the strictly-positive-frequency part of G -+ i qbar dtinv(q G),
    /// relative to ||G||, for the reconstructed G
    pub witness_residual: Option<f64>,
}

/// Singular-value scan of Omega(q); when sigma_min is below tol * sigma_max the
/// kernel candidate g is extracted and the paper's witness condition verified
/// for G = conj((1 -+ 2 Theta(q)) g).
pub fn degeneracy_witness(q: &HardyState, tol: f64) -> Result<DegeneracyReport> {
    let r = omega_op(q).real_rep();
    let dim = r.nrows();
    let n = q.n();
    let (sigma_min, sigma_max, kernel) = if dim <= 600 {
        let svd = r.clone().svd(false, true);
        let vt = svd.v_t.as_ref().unwrap();
        let mut imin = 0;
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s < svd.singular_values[imin] {
                imin = i;
            }
        }
        let smin = svd.singular_values[imin];
        let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
        let row = vt.row(imin);
        let g: Vec<Complex64> = (0..n).map(|i| Complex64::new(row[i], row[i + n])).collect();
        (smin, smax, g)
    } else {
        let (smin, smax) = sigma_extremes(&r, 60)?;
        let u = sigma_min_vector(&r, 60).unwrap_or_else(|| pseudo_vector(dim, 7));
        let g: Vec<Complex64> = (0..n).map(|i| Complex64::new(u[i], u[i + n])).collect();
        (smin, smax, g)
    };
    let mut report = DegeneracyReport { sigma_min, sigma_max, kernel: None, witness_residual: None };
    if sigma_min < tol * sigma_max.max(1.0) {
        // reconstruct G = conj((1 -+ 2 Theta(q)) g) and verify the witness condition
        let gs = Spectrum::from_state(&q.geometry, &kernel);
        let upper = q.sign.upper();
        let mut w = gs.clone();
        w.accumulate(&theta_apply(q, &gs), cplx(-2.0 * upper));
        let g_big = w.conj_flip();
        report.witness_residual = Some(witness_condition_residual(q, &g_big)?);
        report.kernel = Some(kernel);
    }
    Ok(report)
}

/// Residual of the degeneracy witness condition: the norm of the
/// strictly-positive-frequency part of  G -+ i qbar dtinv(q G), over ||G||.
pub fn witness_condition_residual(q: &HardyState, g_state: &Spectrum) -> Result<f64> {
    let geom = &q.geometry;
    let qs = q.spectrum();
    let qg = qs.multiply(g_state, geom);
    let u = if geom.is_torus() {
        antiderivative_torus(&qg)
    } else {
        // (qG) is a product of two Hardy states, so its integer-lattice support
        // starts at index 1 and the sawtooth (mean) part is absent
        let (u, slope) = antiderivative_line_spectral(geom, &qg);
        debug_assert!(slope.norm() < 1e-14);
        u
    };
    let mut w = g_state.clone();
    let qbar_u = qs.conj_flip().multiply(&u, geom);
    w.accumulate(&qbar_u, -q.sign.upper() * I);
    // strictly positive frequencies: torus xi >= 1; line state lattice idx >= 0
    let lo_pos = if geom.is_torus() { 1 } else { 0 };
    let mut acc = 0.0;
    for idx in lo_pos..=w.hi() {
        acc += w.get(idx).norm_sqr();
    }
    let defect = (geom.weight() * acc).sqrt();
    let gnorm = g_state.norm(geom);
    Ok(defect / gnorm.max(1e-300))
}

// ---------------------------------------------------------------------------
// Functionals, Wirtinger derivatives, symplectic gradients
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Functional {
    Mass,
    Momentum,
    Hamiltonian,
    En(usize),
    Beta(f64),
    Hk(f64),
}

impl Functional {
    pub fn label(&self) -> String {
        match self {
            Functional::Mass => "mass".into(),
            Functional::Momentum => "momentum".into(),
            Functional::Hamiltonian => "hamiltonian".into(),
            Functional::En(n) => format!("e{n}"),
            Functional::Beta(k) => format!("beta({k})"),
            Functional::Hk(k) => format!("hk({k})"),
        }
    }
}

/// Scalar value of a functional (geometry-dependent combinations).
pub fn eval(f: Functional, q: &HardyState, lax: &LaxMatrix) -> Result<f64> {
    let upper = q.sign.upper();
    let torus = q.geometry.is_torus();
    Ok(match f {
        Functional::Mass => q.mass(),
        Functional::Momentum => {
            let e = lax.energies(q, 1);
            if torus {
                -0.5 * e[1] - upper / (4.0 * PI) * e[0] * e[0]
            } else {
                -0.5 * e[1]
            }
        }
        Functional::Hamiltonian => {
            let e = lax.energies(q, 2);
            if torus {
                0.5 * e[2] + upper * 3.0 / (4.0 * PI) * e[0] * e[1] + e[0].powi(3) / (4.0 * PI * PI)
            } else {
                0.5 * e[2]
            }
        }
        Functional::En(n) => lax.energies(q, n)[n],
        Functional::Beta(k) => lax.resolve(q, k)?.beta,
        Functional::Hk(k) => {
            let e = lax.energies(q, 1);
            let r = lax.resolve(q, k)?;
            let dbdk = lax.beta_dk(q, k)?;
            let e1k = -k * k * r.beta + k * e[0];
            let e2k = k.powi(3) * r.beta - k * k * e[0] + k * e[1];
            let lm2 = e[0] - 2.0 * k * r.beta - k * k * dbdk;
            if torus {
                0.5 * e2k + upper * 3.0 / (4.0 * PI) * e[0] * e1k + e[0].powi(3) / (4.0 * PI * PI)
                    - upper / (4.0 * PI) * k * e[0] * lm2
            } else {
                0.5 * e2k
            }
        }
    })
}

/// Powers L_q^j q for j = 0..n.
fn lax_powers(q: &HardyState, lax: &LaxMatrix, n: usize) -> Vec<Vec<Complex64>> {
    let mut out = vec![q.coeffs.clone()];
    for _ in 0..n {
        let v = DVector::from_column_slice(out.last().unwrap());
        out.push((&lax.mat * v).iter().copied().collect());
    }
    out
}

/// Wirtinger derivative delta F / delta qbar (the Hardy-space Riesz
/// representative of the real differential).
pub fn delta(f: Functional, q: &HardyState, lax: &LaxMatrix) -> Result<Vec<Complex64>> {
    let geom = &q.geometry;
    let upper = q.sign.upper();
    let torus = geom.is_torus();
    match f {
        Functional::Mass => Ok(q.coeffs.clone()),
        Functional::En(n) => Ok(delta_en(q, lax, n)),
        Functional::Momentum => {
            let d1 = delta_en(q, lax, 1);
            let e0 = q.mass();
            let mut out: Vec<Complex64> = d1.iter().map(|z| -0.5 * z).collect();
            if torus {
                for (o, c) in out.iter_mut().zip(q.coeffs.iter()) {
                    *o -= cplx(upper * e0 / (2.0 * PI)) * c;
                }
            }
            Ok(out)
        }
        Functional::Hamiltonian => {
            let e = lax.energies(q, 2);
            let d1 = delta_en(q, lax, 1);
            let d2 = delta_en(q, lax, 2);
            let mut out: Vec<Complex64> = d2.iter().map(|z| 0.5 * z).collect();
            if torus {
                for i in 0..out.len() {
                    out[i] += cplx(upper * 3.0 / (4.0 * PI)) * (cplx(e[0]) * d1[i] + cplx(e[1]) * q.coeffs[i]);
                    out[i] += cplx(3.0 * e[0] * e[0] / (4.0 * PI * PI)) * q.coeffs[i];
                }
            }
            Ok(out)
        }
        Functional::Beta(k) => {
            let r = lax.resolve(q, k)?;
            Ok(delta_beta(q, &r.m, upper))
        }
        Functional::Hk(_) => {
            // no closed form is tracked for the regularized Hamiltonian;
            // brackets with Hk go through the finite-difference oracle
            let h = 1e-5 * q.norm_l2().max(1.0);
            delta_fd(f, q, h)
        }
    }
}

fn delta_en(q: &HardyState, lax: &LaxMatrix, n: usize) -> Vec<Complex64> {
    let geom = &q.geometry;
    let upper = q.sign.upper();
    let pw = lax_powers(q, lax, n.max(1));
    let mut out = pw[n].clone();
    if n >= 1 {
        let qs = q.spectrum();
        let mut acc = Spectrum::zero(qs.off);
        for j in 0..n {
            let ell = n - 1 - j;
            let lj = Spectrum::from_state(geom, &pw[j]);
            let le = Spectrum::from_state(geom, &pw[ell]);
            let q_lj = qs.multiply(&lj.conj_flip(), geom).clip(Side::Minus, geom);
            acc.accumulate(&le.multiply(&q_lj, geom), cplx(1.0));
        }
        let proj = acc.clip(Side::Plus, geom).to_state(geom);
        for (o, p) in out.iter_mut().zip(proj.iter()) {
            *o -= cplx(upper) * p;
        }
    }
    out
}

fn delta_beta(q: &HardyState, m: &[Complex64], upper: f64) -> Vec<Complex64> {
    let geom = &q.geometry;
    let qs = q.spectrum();
    let ms = Spectrum::from_state(geom, m);
    let qmb = qs.multiply(&ms.conj_flip(), geom).clip(Side::Minus, geom);
    let t = ms.multiply(&qmb, geom).clip(Side::Plus, geom).to_state(geom);
    m.iter().zip(t.iter()).map(|(a, b)| a + cplx(upper) * b).collect()
}

/// Symplectic gradient nabla_omega F: the paper's closed forms, with the torus
/// variants carrying the extra E-, beta-, and ||m||^2-proportional terms.
pub fn grad(f: Functional, q: &HardyState, lax: &LaxMatrix) -> Result<Vec<Complex64>> {
    let geom = &q.geometry;
    let upper = q.sign.upper();
    let torus = geom.is_torus();
    match f {
        Functional::Mass => Ok(q.coeffs.iter().map(|c| -2.0 * I * c).collect()),
        Functional::En(n) => Ok(grad_en(q, lax, n)),
        Functional::Momentum => {
            // P = -E_1/2 -+ E_0^2/(4 pi) [torus]; the E_0^2 term contributes
            // -+ (E_0 / 2 pi) nabla E_0
            let g1 = grad_en(q, lax, 1);
            let g0 = grad_en(q, lax, 0);
            let e0 = q.mass();
            let scale = if torus { upper * e0 / (2.0 * PI) } else { 0.0 };
            Ok(g1.iter().zip(g0.iter()).map(|(a, b)| -0.5 * a - cplx(scale) * b).collect())
        }
        Functional::Hamiltonian => {
            let e = lax.energies(q, 2);
            let g0 = grad_en(q, lax, 0);
            let g1 = grad_en(q, lax, 1);
            let g2 = grad_en(q, lax, 2);
            let mut out = vec![Complex64::default(); q.n()];
            for i in 0..q.n() {
                out[i] = 0.5 * g2[i];
                if torus {
                    out[i] += cplx(upper * 3.0 / (4.0 * PI)) * (cplx(e[0]) * g1[i] + cplx(e[1]) * g0[i]);
                    out[i] += cplx(3.0 * e[0] * e[0] / (4.0 * PI * PI)) * g0[i];
                }
            }
            Ok(out)
        }
        Functional::Beta(k) => {
            let r = lax.resolve(q, k)?;
            Ok(grad_beta(q, &r.m, r.beta, upper))
        }
        Functional::Hk(k) => grad_hk(q, lax, k),
    }
}

fn grad_en(q: &HardyState, lax: &LaxMatrix, n: usize) -> Vec<Complex64> {
    let geom = &q.geometry;
    let upper = q.sign.upper();
    let torus = geom.is_torus();
    if n == 0 {
        return q.coeffs.iter().map(|c| -2.0 * I * c).collect();
    }
    let pw = lax_powers(q, lax, n);
    let w = geom.weight();
    let e: Vec<f64> = (0..n)
        .map(|k| {
            w * q.coeffs.iter().zip(pw[k].iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>()
        })
        .collect();
    let qs = q.spectrum();
    let mut out: Vec<Complex64> = pw[n].iter().map(|z| -2.0 * I * z).collect();
    let mut acc = vec![Complex64::default(); q.n()];
    for j in 0..n {
        let ell = n - 1 - j;
        let lj = Spectrum::from_state(geom, &pw[j]);
        let le = Spectrum::from_state(geom, &pw[ell]);
        let q_le = qs.multiply(&le.conj_flip(), geom).clip(Side::Plus, geom);
        let prod = lj.multiply(&q_le, geom).to_state(geom);
        for i in 0..q.n() {
            acc[i] += prod[i];
            if torus {
                acc[i] -= cplx(e[ell] / TWO_PI) * pw[j][i];
            }
        }
    }
    for i in 0..q.n() {
        out[i] -= cplx(upper) * 2.0 * I * acc[i];
        if torus {
            out[i] += cplx(upper) * I / cplx(PI) * cplx(n as f64 * e[n - 1]) * q.coeffs[i];
        }
    }
    out
}

fn grad_beta(q: &HardyState, m: &[Complex64], beta: f64, upper: f64) -> Vec<Complex64> {
    let geom = &q.geometry;
    let torus = geom.is_torus();
    let qs = q.spectrum();
    let ms = Spectrum::from_state(geom, m);
    let qmb = qs.multiply(&ms.conj_flip(), geom).clip(Side::Plus, geom);
    let mc = ms.multiply(&qmb, geom).to_state(geom);
    let mnorm2 = geom.weight() * m.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let mut out = vec![Complex64::default(); q.n()];
    for i in 0..q.n() {
        out[i] = -2.0 * I * m[i] + cplx(upper) * 2.0 * I * mc[i];
        if torus {
            out[i] -= cplx(upper) * I / cplx(PI) * (cplx(beta) * m[i] + cplx(mnorm2) * q.coeffs[i]);
        }
    }
    out
}

/// The regularized Hamiltonian's symplectic gradient (full display on the
/// torus; on the line H_k = E_2^k / 2).
fn grad_hk(q: &HardyState, lax: &LaxMatrix, k: f64) -> Result<Vec<Complex64>> {
    let geom = &q.geometry;
    let upper = q.sign.upper();
    let n = q.n();
    let r = lax.resolve(q, k)?;
    let m = &r.m;
    let beta = r.beta;
    let qs = q.spectrum();
    let ms = Spectrum::from_state(geom, m);
    let qmb = qs.multiply(&ms.conj_flip(), geom).clip(Side::Plus, geom);
    let m_cqmb = ms.multiply(&qmb, geom).to_state(geom); // m C+(q mbar)
    let qp: Vec<Complex64> =
        (0..n).map(|i| I * cplx(geom.state_freq(i)) * q.coeffs[i]).collect();

    if !geom.is_torus() {
        // nabla Hk = k^3 [-i m +- i m C+(q mbar)] + i k^2 q - k q'
        let mut out = vec![Complex64::default(); n];
        for i in 0..n {
            out[i] = cplx(k.powi(3)) * (-I * m[i] + cplx(upper) * I * m_cqmb[i])
                + I * cplx(k * k) * q.coeffs[i]
                - cplx(k) * qp[i];
        }
        return Ok(out);
    }

    let e0 = q.mass();
    let w = geom.weight();
    let mn2 = w * m.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let lm: Vec<Complex64> = {
        let v = DVector::from_column_slice(m);
        (&lax.mat * v).iter().copied().collect()
    };
    let lm2 = w * lm.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let rm = lax.solve(k, m)?; // (L+k)^{-1} m
    let rms = Spectrum::from_state(geom, &rm);
    let rm_cqmb = rms.multiply(&qmb, geom).to_state(geom); // [(L+k)^{-1}m] C+(q mbar)
    let qrmb = qs.multiply(&rms.conj_flip(), geom).clip(Side::Plus, geom);
    let m_cqrmb = ms.multiply(&qrmb, geom).to_state(geom); // m C+(q conj(rm))
    let mrm = w * m.iter().zip(rm.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>();

    let front = cplx(k.powi(3) - upper * 3.0 / (2.0 * PI) * k * k * e0);
    let mut out = vec![Complex64::default(); n];
    for i in 0..n {
        let block = -I * m[i] + cplx(upper) * I * m_cqmb[i]
            - cplx(upper / (2.0 * PI)) * I * (cplx(beta) * m[i] + cplx(mn2) * q.coeffs[i]);
        out[i] = front * block;
        out[i] += I * cplx(k * k) * q.coeffs[i] - cplx(k) * qp[i]
            - cplx(upper * 2.0 / PI * k * e0) * I * q.coeffs[i]
            + cplx(upper * 3.0 / (2.0 * PI) * k * k * beta) * I * q.coeffs[i]
            - cplx(3.0 / (2.0 * PI * PI) * e0 * e0) * I * q.coeffs[i]
            + cplx(upper / (2.0 * PI) * k * lm2) * I * q.coeffs[i];
        let brace = -I * q.coeffs[i] + 2.0 * I * cplx(k) * m[i]
            - cplx(upper) * 2.0 * I * cplx(k) * m_cqmb[i]
            + cplx(upper / PI * k) * I * (cplx(beta) * m[i] + cplx(mn2) * q.coeffs[i])
            - I * cplx(k * k) * rm[i]
            + cplx(upper) * I * cplx(k * k) * (rm_cqmb[i] + m_cqrmb[i])
            - cplx(upper / (2.0 * PI) * k * k) * I * (cplx(beta) * rm[i] + cplx(mn2) * m[i])
            - cplx(upper / PI * k * k * mrm) * I * q.coeffs[i];
        out[i] -= cplx(upper / (2.0 * PI) * k * e0) * brace;
    }
    Ok(out)
}

/// Finite-difference Wirtinger derivative (the oracle's core): central
/// differences along the 2N real coordinate directions.
pub fn delta_fd(f: Functional, q: &HardyState, h: f64) -> Result<Vec<Complex64>> {
    let n = q.n();
    let w = q.geometry.weight();
    let mut out = vec![Complex64::default(); n];
    let evalf = |coeffs: Vec<Complex64>| -> Result<f64> {
        let qq = q.with_coeffs(coeffs);
        let lax = LaxMatrix::build(&qq)?;
        eval(f, &qq, &lax)
    };
    for j in 0..n {
        let mut cp = q.coeffs.clone();
        cp[j] += cplx(h);
        let fp = evalf(cp.clone())?;
        cp[j] -= cplx(2.0 * h);
        let fm = evalf(cp.clone())?;
        cp[j] += cplx(h) + I * cplx(h);
        let gp = evalf(cp.clone())?;
        cp[j] -= 2.0 * I * cplx(h);
        let gm = evalf(cp)?;
        let du = (fp - fm) / (2.0 * h);
        let dv = (gp - gm) / (2.0 * h);
        // dF(f) = 2 Re <f, delta>: real direction gives 2 w Re(delta_j),
        // imaginary direction gives 2 w Im(delta_j)
        out[j] = Complex64::new(du, dv) / (2.0 * w);
    }
    Ok(out)
}

/// Finite-difference symplectic gradient: 2 J(q) (deltaF/deltaqbar)_fd.
pub fn grad_oracle(f: Functional, q: &HardyState, h: f64) -> Result<Vec<Complex64>> {
    let d = delta_fd(f, q, h)?;
    let j = JMap::build(q)?;
    let out = j.apply(&d)?;
    Ok(out.iter().map(|z| 2.0 * z).collect())
}

/// Side-by-side analytic and oracle gradients.
#[derive(Clone, Debug)]
pub struct GradientReport {
    pub functional: String,
    pub analytic: Vec<Complex64>,
    pub oracle: Vec<Complex64>,
    pub discrepancy: f64,
}

pub fn gradient_report(f: Functional, q: &HardyState, h: f64) -> Result<GradientReport> {
    let lax = LaxMatrix::build(q)?;
    let analytic = grad(f, q, &lax)?;
    let oracle = grad_oracle(f, q, h)?;
    let w = q.geometry.weight();
    let discrepancy = (w
        * analytic.iter().zip(oracle.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>())
    .sqrt();
    Ok(GradientReport { functional: f.label(), analytic, oracle, discrepancy })
}

/// {F, G}(q) = 4 Re < deltaF/deltaqbar, J(q) deltaG/deltaqbar >.
pub fn poisson_bracket(f: Functional, g: Functional, q: &HardyState) -> Result<f64> {
    let lax = LaxMatrix::build(q)?;
    let df = delta(f, q, &lax)?;
    let dg = delta(g, q, &lax)?;
    let j = JMap::build(q)?;
    let jdg = j.apply(&dg)?;
    let w = q.geometry.weight();
    Ok(4.0 * w * df.iter().zip(jdg.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>())
}

/// Cyclic closedness residual D_f w(g,h) + D_g w(h,f) + D_h w(f,g) with the
/// analytic directional derivative of Theta.
pub fn closedness_residual(
    q: &HardyState,
    f: &HardyState,
    g: &HardyState,
    h: &HardyState,
) -> Result<f64> {
    let geom = &q.geometry;
    let upper = q.sign.upper();
    let term = |a: &HardyState, b: &HardyState, c: &HardyState| -> f64 {
        // D_a omega(b, c) = -+ 2 Re <b, i C+ (DTheta(q; a) c)>
        let cs = Spectrum::from_state(geom, &c.coeffs);
        let dth = theta_derivative(q, a, &cs).clip(Side::Plus, geom).to_state(geom);
        let bs = b.spectrum();
        let dths = Spectrum::from_state(geom, &dth).scaled(I);
        -upper * 2.0 * bs.inner(&dths, geom).re
    };
    Ok(term(f, g, h) + term(g, h, f) + term(h, f, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use crate::presets;

    #[test]
    fn omega_at_zero_is_i_times_identity() {
        for g in [Geometry::torus(12), Geometry::line(12, 9.0)] {
            let q = HardyState::zero(g, Sign::Focusing);
            let op = omega_op(&q);
            for j in 0..12 {
                for i in 0..12 {
                    let want = if i == j { I } else { Complex64::default() };
                    assert!((op.a[(i, j)] - want).norm() < 1e-14);
                    assert!(op.b[(i, j)].norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn theta_is_nilpotent() {
        let g = Geometry::torus(24);
        let mut rng = presets::seeded_rng(3);
        let q = presets::random_state(g, Sign::Focusing, &presets::RandomSpec::rough(1.0), &mut rng).unwrap();
        let f = presets::random_state(g, Sign::Focusing, &presets::RandomSpec::rough(1.0), &mut rng).unwrap();
        // function-level composition (alias-free): Theta(q) Theta(q) f
        let th1 = theta_apply(&q, &f.spectrum());
        let th2 = theta_apply(&q, &th1);
        assert!(th2.max_abs() < 1e-13, "nilpotency defect {}", th2.max_abs());
    }

    #[test]
    fn omega_antisymmetric_both_geometries() {
        for (g, sign) in [
            (Geometry::torus(20), Sign::Focusing),
            (Geometry::torus(20), Sign::Defocusing),
            (Geometry::line(24, 12.0), Sign::Focusing),
        ] {
            let mut rng = presets::seeded_rng(11);
            let spec = presets::RandomSpec::rough(1.0);
            let q = presets::random_state(g, sign, &spec, &mut rng).unwrap();
            let f = presets::random_state(g, sign, &spec, &mut rng).unwrap();
            let h = presets::random_state(g, sign, &spec, &mut rng).unwrap();
            let a = omega_form(&q, &f, &h).unwrap();
            let b = omega_form(&q, &h, &f).unwrap();
            assert!((a + b).abs() < 1e-12 * (1.0 + a.abs()), "antisym {}", a + b);
        }
    }

    #[test]
    fn omega_zero_form_example() {
        // q = 0: omega_0(f, i f) = -||f||^2
        let g = Geometry::torus(16);
        let mut rng = presets::seeded_rng(5);
        let f = presets::random_state(g, Sign::Focusing, &presets::RandomSpec::rough(1.0), &mut rng).unwrap();
        let q = HardyState::zero(g, Sign::Focusing);
        let iff = f.scaled(I);
        let v = omega_form(&q, &f, &iff).unwrap();
        assert!((v + f.mass()).abs() < 1e-12);
    }

    #[test]
    fn torus_witness_is_degenerate() {
        let g = Geometry::torus(24);
        let q = presets::witness_torus(g).unwrap();
        // Omega annihilates e^{ix} exactly
        let mut gg = vec![Complex64::default(); 24];
        gg[1] = cplx(1.0);
        let og = omega_apply(&q, &gg);
        let n: f64 = og.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(n < 1e-14);
        let rep = degeneracy_witness(&q, 1e-6).unwrap();
        assert!(rep.sigma_min < 1e-10, "sigma_min {}", rep.sigma_min);
        assert!(rep.witness_residual.unwrap() < 1e-8);
        // j_map must refuse
        assert!(matches!(JMap::build(&q), Err(CcmError::DegenerateForm { .. })));
    }

    #[test]
    fn paper_witness_condition_on_torus() {
        // q == 1, G = e^{ix}: residual of G - i qbar dtinv(q G) vanishes
        let g = Geometry::torus(16);
        let q = presets::witness_torus(g).unwrap();
        let mut gcoef = vec![Complex64::default(); 16];
        gcoef[1] = cplx(1.0);
        let gs = Spectrum::from_state(&g, &gcoef);
        let r = witness_condition_residual(&q, &gs).unwrap();
        assert!(r < 1e-14, "witness residual {r}");
    }

    #[test]
    fn j_inverts_omega() {
        for g in [Geometry::torus(20), Geometry::line(20, 10.0)] {
            let mut rng = presets::seeded_rng(9);
            let q = presets::random_state(g, Sign::Focusing, &presets::RandomSpec::rough(1.0), &mut rng).unwrap();
            let j = JMap::build(&q).unwrap();
            let mut e = vec![Complex64::default(); 20];
            e[3] = cplx(0.7) + I * cplx(0.2);
            let jg = j.apply(&e).unwrap();
            let back = omega_apply(&q, &jg);
            let err: f64 = back.iter().zip(e.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            assert!(err < 1e-10, "Omega J != I: {err}");
        }
    }

    #[test]
    fn gradient_closed_forms_match_oracle() {
        let g = Geometry::torus(24);
        let mut rng = presets::seeded_rng(21);
        let q = presets::random_state(g, Sign::Focusing, &presets::RandomSpec::smooth(1.0), &mut rng).unwrap();
        let h = 1e-5 * q.norm_l2().max(1.0);
        for f in [
            Functional::Mass,
            Functional::Momentum,
            Functional::En(2),
            Functional::Beta(3.0),
            Functional::Hamiltonian,
            Functional::Hk(8.0),
        ] {
            let rep = gradient_report(f, &q, h).unwrap();
            let scale: f64 = (q.geometry.weight()
                * rep.analytic.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sqrt();
            assert!(
                rep.discrepancy <= 1e-5 * scale.max(1.0),
                "{}: discrepancy {} vs scale {}",
                rep.functional,
                rep.discrepancy,
                scale
            );
        }
    }

    #[test]
    fn momentum_gradient_is_plus_q_prime() {
        // the E_n-combination and the FD oracle agree on +q' (the paper's prose
        // says -q'; its own displayed formulas give +q')
        let g = Geometry::torus(20);
        let mut rng = presets::seeded_rng(2);
        let q = presets::random_state(g, Sign::Focusing, &presets::RandomSpec::rough(0.8), &mut rng).unwrap();
        let lax = LaxMatrix::build(&q).unwrap();
        let gp = grad(Functional::Momentum, &q, &lax).unwrap();
        for (k, v) in gp.iter().enumerate() {
            let want = I * cplx(g.state_freq(k)) * q.coeffs[k];
            assert!((v - want).norm() < 1e-10, "mode {k}");
        }
    }

    #[test]
    fn mass_brackets_vanish() {
        let g = Geometry::torus(16);
        let mut rng = presets::seeded_rng(4);
        let q = presets::random_state(g, Sign::Defocusing, &presets::RandomSpec::rough(1.0), &mut rng).unwrap();
        let b = poisson_bracket(Functional::Mass, Functional::Mass, &q).unwrap();
        assert!(b.abs() < 1e-12);
    }

    #[test]
    fn closedness_cyclic_sum_vanishes() {
        for g in [Geometry::torus(16), Geometry::line(16, 9.0)] {
            let mut rng = presets::seeded_rng(13);
            let spec = presets::RandomSpec::rough(1.0);
            let q = presets::random_state(g, Sign::Focusing, &spec, &mut rng).unwrap();
            let f = presets::random_state(g, Sign::Focusing, &spec, &mut rng).unwrap();
            let h = presets::random_state(g, Sign::Focusing, &spec, &mut rng).unwrap();
            let k = presets::random_state(g, Sign::Focusing, &spec, &mut rng).unwrap();
            let r = closedness_residual(&q, &f, &h, &k).unwrap();
            assert!(r.abs() < 1e-10, "closedness {r}");
        }
    }
}

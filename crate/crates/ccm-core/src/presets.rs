//! Canonical states: the soliton families, plane waves, degeneracy witnesses,
//! and the seeded random ensembles used by the verification suites.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CcmError, Result};
use crate::geometry::{Geometry, GeometryKind, Sign, M_STAR, TWO_PI};
use crate::lax::{cplx, LaxMatrix};
use crate::state::HardyState;

/// Torus soliton q_n(x) = sqrt(2n+1) / (1 - n(e^{ix}-1)):
/// coefficients sqrt(2n+1) n^xi / (n+1)^{xi+1}, polished to the eigenstate of
/// the truncated Lax operator (eigenvalue -1) when the truncated tail is visible.
pub fn soliton_torus(geometry: Geometry, n: usize) -> Result<HardyState> {
    if geometry.kind != GeometryKind::Torus {
        return Err(CcmError::InvalidParameter("soliton_torus needs torus geometry".into()));
    }
    if n == 0 {
        return Err(CcmError::InvalidParameter("soliton parameter n must be >= 1".into()));
    }
    let nn = geometry.n_modes;
    let nf = n as f64;
    let amp = (2.0 * nf + 1.0).sqrt();
    let r = nf / (nf + 1.0);
    let coeffs: Vec<Complex64> =
        (0..nn).map(|k| cplx(amp / (nf + 1.0) * r.powi(k as i32))).collect();
    let mut q = HardyState::new(geometry, Sign::Focusing, coeffs)?;
    // tail of the geometric family beyond the band
    let tail = r.powi(nn as i32);
    if tail > 1e-12 {
        q = polish_torus_soliton(q)?;
    }
    Ok(q)
}

/// A few inverse-iteration steps toward the discrete eigenstate nearest
/// eigenvalue -1, renormalized to mass 2*pi.
fn polish_torus_soliton(mut q: HardyState) -> Result<HardyState> {
    for _ in 0..3 {
        let lax = LaxMatrix::build(&q)?;
        let (vals, vecs) = lax.eigh();
        let mut best = 0;
        for (i, v) in vals.iter().enumerate() {
            if (v + 1.0).abs() < (vals[best] + 1.0).abs() {
                best = i;
            }
        }
        let col = vecs.column(best);
        let mut v: Vec<Complex64> = col.iter().copied().collect();
        // align the phase against the current state
        let ph: Complex64 = v.iter().zip(q.coeffs.iter()).map(|(a, b)| a.conj() * b).sum();
        let ph = ph / ph.norm();
        for z in v.iter_mut() {
            *z *= ph;
        }
        let vq = q.with_coeffs(v);
        let scale = (TWO_PI / vq.mass()).sqrt();
        q = vq.scaled(cplx(scale));
    }
    Ok(q)
}

/// Line soliton q_n(x) = sqrt(2n) / (1 - i n x): coefficients A e^{-xi/n} with A
/// normalized so that the discrete eigenrelation L_q q = 0 holds exactly
/// (A -> sqrt(2/n) in the continuum limit), which also pins the mass to 2*pi.
pub fn soliton_line(geometry: Geometry, n: usize) -> Result<HardyState> {
    if geometry.kind != GeometryKind::Line {
        return Err(CcmError::InvalidParameter("soliton_line needs line geometry".into()));
    }
    if n == 0 {
        return Err(CcmError::InvalidParameter("soliton parameter n must be >= 1".into()));
    }
    let dxi = geometry.dxi();
    let t = dxi / n as f64;
    // sum_k dxi * A^2 e^{-2 xi_k / n} = dxi A^2 rho / (1 - rho^2), rho = e^{-t};
    // the eigenrelation requires this to equal exactly 1 (mass 2*pi).
    let a2 = 2.0 * t.sinh() / dxi;
    let amp = a2.sqrt();
    let coeffs: Vec<Complex64> = (0..geometry.n_modes)
        .map(|k| cplx(amp * (-geometry.state_freq(k) / n as f64).exp()))
        .collect();
    HardyState::new(geometry, Sign::Focusing, coeffs)
}

/// Plane wave c e^{imx} (torus) or the staggered analogue on the line grid.
pub fn plane_wave(geometry: Geometry, sign: Sign, c: Complex64, m: usize) -> Result<HardyState> {
    if m >= geometry.n_modes {
        return Err(CcmError::InvalidParameter(format!(
            "plane-wave mode {m} outside the retained band"
        )));
    }
    let mut q = HardyState::zero(geometry, sign);
    q.coeffs[m] = c;
    Ok(q)
}

/// Degeneracy witness on the line: q = G = sqrt(2) (x+i)^{-1},
/// with transform -i sqrt(2) e^{-xi}.
pub fn witness_line(geometry: Geometry) -> Result<HardyState> {
    if geometry.kind != GeometryKind::Line {
        return Err(CcmError::InvalidParameter("witness_line needs line geometry".into()));
    }
    let coeffs: Vec<Complex64> = (0..geometry.n_modes)
        .map(|k| Complex64::new(0.0, -1.0) * cplx(2.0f64.sqrt() * (-geometry.state_freq(k)).exp()))
        .collect();
    HardyState::new(geometry, Sign::Focusing, coeffs)
}

/// Degeneracy witness on the torus: q == 1 (mass exactly 2*pi = M_*).
pub fn witness_torus(geometry: Geometry) -> Result<HardyState> {
    plane_wave(geometry, Sign::Focusing, cplx(1.0), 0)
}

/// Options for the documented random ensembles.
#[derive(Clone, Copy, Debug)]
pub struct RandomSpec {
    pub target_mass: f64,
    /// power-law decay exponent range for (1+xi)^{-a} (torus generator)
    pub decay_min: f64,
    pub decay_max: f64,
    /// apply a geometric taper e^{-6 xi / xi_max} (smooth ensemble)
    pub taper: bool,
}

impl RandomSpec {
    pub fn rough(target_mass: f64) -> Self {
        RandomSpec { target_mass, decay_min: 1.5, decay_max: 3.0, taper: false }
    }

    pub fn smooth(target_mass: f64) -> Self {
        RandomSpec { target_mass, decay_min: 1.5, decay_max: 3.0, taper: true }
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Torus generator: qhat(xi) = r_xi e^{i phi_xi} (1+xi)^{-a}, a in [decay_min,
/// decay_max], rescaled to the target mass. With `taper`, a geometric factor
/// e^{-6 xi/xi_max} is applied (used wherever n derivatives of q are exercised).
pub fn random_torus_state(
    geometry: Geometry,
    sign: Sign,
    spec: &RandomSpec,
    rng: &mut ChaCha8Rng,
) -> Result<HardyState> {
    let n = geometry.n_modes;
    let a = rng.gen_range(spec.decay_min..=spec.decay_max);
    let mut coeffs = Vec::with_capacity(n);
    for k in 0..n {
        let xi = geometry.state_freq(k);
        let r: f64 = rng.gen_range(0.2..1.0);
        let phi: f64 = rng.gen_range(0.0..TWO_PI);
        let mut v = Complex64::from_polar(r * (1.0 + xi).powf(-a), phi);
        if spec.taper {
            v *= cplx((-6.0 * xi / geometry.state_freq(n - 1)).exp());
        }
        coeffs.push(v);
    }
    let q = HardyState::new(geometry, sign, coeffs)?;
    let scale = (spec.target_mass / q.mass()).sqrt();
    Ok(q.scaled(cplx(scale)))
}

/// Line generator: a few Gaussian packets in frequency, translated inside the
/// window and kept away from xi = 0 (Hardy states with qhat(0) != 0 decay like
/// 1/x and defeat the periodized window; see README).
pub fn random_line_state(
    geometry: Geometry,
    sign: Sign,
    target_mass: f64,
    rng: &mut ChaCha8Rng,
) -> Result<HardyState> {
    let n = geometry.n_modes;
    let l = geometry.half_length.unwrap();
    let xi_max = geometry.state_freq(n - 1);
    let mut coeffs = vec![Complex64::default(); n];
    let packs = rng.gen_range(2..=4);
    for _ in 0..packs {
        let amp = Complex64::from_polar(rng.gen_range(0.3..1.0), rng.gen_range(0.0..TWO_PI));
        let s: f64 = rng.gen_range(0.7..1.5);
        let mu: f64 = rng.gen_range(4.0 * s..(xi_max / 3.0).max(4.0 * s + 1e-9));
        let x0: f64 = rng.gen_range(-l / 4.0..l / 4.0);
        for k in 0..n {
            let xi = geometry.state_freq(k);
            let env = (-(xi - mu) * (xi - mu) / (2.0 * s * s)).exp();
            coeffs[k] += amp * cplx(env) * Complex64::from_polar(1.0, -x0 * xi);
        }
    }
    let q = HardyState::new(geometry, sign, coeffs)?;
    let scale = (target_mass / q.mass()).sqrt();
    Ok(q.scaled(cplx(scale)))
}

/// Seeded random state for either geometry.
pub fn random_state(
    geometry: Geometry,
    sign: Sign,
    spec: &RandomSpec,
    rng: &mut ChaCha8Rng,
) -> Result<HardyState> {
    match geometry.kind {
        GeometryKind::Torus => random_torus_state(geometry, sign, spec, rng),
        GeometryKind::Line => random_line_state(geometry, sign, spec.target_mass, rng),
    }
}

/// Draw a mass uniformly below the focusing threshold fraction.
pub fn random_mass_below(frac_of_mstar: f64, rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(0.05..frac_of_mstar) * M_STAR
}

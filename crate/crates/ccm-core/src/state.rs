use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CcmError, Result};
use crate::geometry::{Geometry, Sign};
use crate::spectrum::{Offset, Spectrum};

/// A truncated nonnegative-frequency coefficient vector: the discrete stand-in
/// for a Hardy-space function q.
#[derive(Clone, Debug)]
pub struct HardyState {
    pub geometry: Geometry,
    pub sign: Sign,
    pub coeffs: Vec<Complex64>,
}

impl HardyState {
    pub fn new(geometry: Geometry, sign: Sign, coeffs: Vec<Complex64>) -> Result<Self> {
        geometry.validate()?;
        if coeffs.len() != geometry.n_modes {
            return Err(CcmError::Dimension { expected: geometry.n_modes, got: coeffs.len() });
        }
        Ok(HardyState { geometry, sign, coeffs })
    }

    pub fn zero(geometry: Geometry, sign: Sign) -> Self {
        let n = geometry.n_modes;
        HardyState { geometry, sign, coeffs: vec![Complex64::default(); n] }
    }

    pub fn n(&self) -> usize {
        self.geometry.n_modes
    }

    pub fn spectrum(&self) -> Spectrum {
        Spectrum::from_state(&self.geometry, &self.coeffs)
    }

    pub fn with_coeffs(&self, coeffs: Vec<Complex64>) -> Self {
        HardyState { geometry: self.geometry, sign: self.sign, coeffs }
    }

    pub fn mass(&self) -> f64 {
        self.geometry.weight() * self.coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub fn norm_l2(&self) -> f64 {
        self.mass().sqrt()
    }

    pub fn inner(&self, other: &HardyState) -> Result<Complex64> {
        if !self.geometry.same_discretization(&other.geometry) {
            return Err(CcmError::GeometryMismatch);
        }
        Ok(self.geometry.weight()
            * self
                .coeffs
                .iter()
                .zip(other.coeffs.iter())
                .map(|(a, b)| a.conj() * b)
                .sum::<Complex64>())
    }

    /// Euclidean distance in L^2.
    pub fn distance(&self, other: &HardyState) -> f64 {
        let w = self.geometry.weight();
        (w * self
            .coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>())
        .sqrt()
    }

    pub fn scaled(&self, z: Complex64) -> Self {
        self.with_coeffs(self.coeffs.iter().map(|c| c * z).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Mass above frequency index N/2 (frequency-cascade monitor).
    pub fn tail_mass(&self) -> f64 {
        let half = self.n() / 2;
        self.geometry.weight() * self.coeffs[half..].iter().map(|z| z.norm_sqr()).sum::<f64>()
    }
}

/// Serialized form: structured text with coefficients in increasing frequency order.
#[derive(Serialize, Deserialize)]
pub struct StateFile {
    pub geometry: Geometry,
    pub sign: Sign,
    pub coeffs: Vec<[f64; 2]>,
}

impl StateFile {
    pub fn from_state(q: &HardyState) -> Self {
        StateFile {
            geometry: q.geometry,
            sign: q.sign,
            coeffs: q.coeffs.iter().map(|z| [z.re, z.im]).collect(),
        }
    }

    pub fn into_state(self) -> Result<HardyState> {
        let coeffs = self.coeffs.iter().map(|p| Complex64::new(p[0], p[1])).collect();
        HardyState::new(self.geometry, self.sign, coeffs)
    }
}

pub fn save_state(q: &HardyState, path: &std::path::Path) -> Result<()> {
    let file = StateFile::from_state(q);
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_state(path: &std::path::Path) -> Result<HardyState> {
    let text = std::fs::read_to_string(path)?;
    let file: StateFile = serde_json::from_str(&text)?;
    file.into_state()
}

/// Full-band view used by `analyze`: all frequencies of the symmetric band.
pub fn full_band(geom: &Geometry) -> (i64, i64, Offset) {
    let n = geom.n_modes as i64;
    if geom.is_torus() {
        (-(n - 1), n - 1, Offset::Int)
    } else {
        (-n, n - 1, Offset::Half)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_roundtrip() {
        let g = Geometry::torus(8);
        let q = HardyState::new(
            g,
            Sign::Focusing,
            (0..8).map(|i| Complex64::new(i as f64, -0.5 * i as f64)).collect(),
        )
        .unwrap();
        let f = StateFile::from_state(&q);
        let text = serde_json::to_string(&f).unwrap();
        let back: StateFile = serde_json::from_str(&text).unwrap();
        let q2 = back.into_state().unwrap();
        assert_eq!(q.coeffs, q2.coeffs);
        assert_eq!(q.sign, q2.sign);
    }
}

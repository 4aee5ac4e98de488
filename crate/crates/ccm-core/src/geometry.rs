use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{CcmError, Result};

pub const TWO_PI: f64 = 2.0 * PI;
/// Mass threshold in the focusing case.
pub const M_STAR: f64 = TWO_PI;

/// Focusing is the upper sign throughout: L_q = -i d/dx - q C+ qbar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Focusing,
    Defocusing,
}

impl Sign {
    /// +1 for the upper (focusing) sign, -1 for the lower.
    pub fn upper(self) -> f64 {
        match self {
            Sign::Focusing => 1.0,
            Sign::Defocusing => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Torus,
    Line,
}

/// Discrete geometry. Torus: period 2*pi, retained frequencies {0,..,N-1}.
/// Line: periodized window [-L, L); retained state frequencies are the staggered
/// grid (k+1/2)*dxi with dxi = pi/L, which keeps the Hardy support boundary off
/// the frequency nodes (see README for why the integer grid cannot represent the
/// line solitons).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub kind: GeometryKind,
    pub n_modes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_length: Option<f64>,
    pub grid_points: usize,
}

impl Geometry {
    pub fn torus(n_modes: usize) -> Self {
        Geometry {
            kind: GeometryKind::Torus,
            n_modes,
            half_length: None,
            grid_points: (4 * n_modes).next_power_of_two(),
        }
    }

    pub fn line(n_modes: usize, half_length: f64) -> Self {
        Geometry {
            kind: GeometryKind::Line,
            n_modes,
            half_length: Some(half_length),
            grid_points: (4 * n_modes).next_power_of_two(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(CcmError::InvalidParameter("n_modes must be positive".into()));
        }
        if self.grid_points < 4 * self.n_modes || !self.grid_points.is_power_of_two() {
            return Err(CcmError::InvalidParameter(
                "grid_points must be a power of two >= 4*n_modes".into(),
            ));
        }
        match self.kind {
            GeometryKind::Torus => Ok(()),
            GeometryKind::Line => match self.half_length {
                Some(l) if l > 0.0 => Ok(()),
                _ => Err(CcmError::InvalidParameter(
                    "line geometry requires positive half_length".into(),
                )),
            },
        }
    }

    pub fn is_torus(&self) -> bool {
        self.kind == GeometryKind::Torus
    }

    /// Frequency spacing: 1 on the torus, pi/L on the line.
    pub fn dxi(&self) -> f64 {
        match self.kind {
            GeometryKind::Torus => 1.0,
            GeometryKind::Line => PI / self.half_length.unwrap(),
        }
    }

    /// State-lattice offset in units of dxi (0 on the torus, 1/2 on the line).
    pub fn state_offset(&self) -> f64 {
        match self.kind {
            GeometryKind::Torus => 0.0,
            GeometryKind::Line => 0.5,
        }
    }

    /// Frequency of retained mode k.
    pub fn state_freq(&self, k: usize) -> f64 {
        (k as f64 + self.state_offset()) * self.dxi()
    }

    /// Plancherel weight: ||q||^2 = weight * sum |c_k|^2.
    pub fn weight(&self) -> f64 {
        TWO_PI * self.dxi()
    }

    /// Physical period of the window (2*pi or 2L). On the line, state-lattice
    /// functions are antiperiodic across the seam; products are periodic.
    pub fn period(&self) -> f64 {
        match self.kind {
            GeometryKind::Torus => TWO_PI,
            GeometryKind::Line => 2.0 * self.half_length.unwrap(),
        }
    }

    /// Physical grid point j of m total (torus: [0, 2pi); line: [-L, L)).
    pub fn grid_x(&self, j: usize, m: usize) -> f64 {
        match self.kind {
            GeometryKind::Torus => TWO_PI * j as f64 / m as f64,
            GeometryKind::Line => {
                let l = self.half_length.unwrap();
                -l + 2.0 * l * j as f64 / m as f64
            }
        }
    }

    pub fn same_discretization(&self, other: &Geometry) -> bool {
        self.kind == other.kind
            && self.n_modes == other.n_modes
            && self.half_length == other.half_length
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_frequencies_are_integers() {
        let g = Geometry::torus(8);
        assert_eq!(g.state_freq(0), 0.0);
        assert_eq!(g.state_freq(7), 7.0);
        assert_eq!(g.grid_points, 32);
    }

    #[test]
    fn line_frequencies_are_staggered() {
        let g = Geometry::line(4, 10.0);
        let dxi = PI / 10.0;
        assert!((g.state_freq(0) - 0.5 * dxi).abs() < 1e-15);
        assert!((g.state_freq(3) - 3.5 * dxi).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_grid() {
        let mut g = Geometry::torus(8);
        g.grid_points = 24; // not a power of two
        assert!(g.validate().is_err());
    }
}

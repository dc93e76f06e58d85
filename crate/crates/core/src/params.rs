//! Model parameters: reaction rates, boundary baths, and channel toggles.

use crate::lattice::Face;
use thiserror::Error;

/// Bath densities `(b1, b2, b3)` on the two faces of the strip. `b0` is the
/// complementary weight `1 - b1 - b2 - b3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryProfile {
    minus: [f64; 3],
    plus: [f64; 3],
}

impl BoundaryProfile {
    pub fn constant(b: [f64; 3]) -> Self {
        Self { minus: b, plus: b }
    }

    pub fn per_face(minus: [f64; 3], plus: [f64; 3]) -> Self {
        Self { minus, plus }
    }

    #[inline]
    pub fn eval(&self, face: Face) -> [f64; 3] {
        match face {
            Face::Minus => self.minus,
            Face::Plus => self.plus,
        }
    }

    /// All four weights `(b0, b1, b2, b3)` on a face.
    #[inline]
    pub fn weights(&self, face: Face) -> [f64; 4] {
        let b = self.eval(face);
        [1.0 - b[0] - b[1] - b[2], b[0], b[1], b[2]]
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("rate {name} = {value} must be finite and nonnegative")]
    BadRate { name: &'static str, value: f64 },
    #[error("bath densities must satisfy b_i >= 0 and b1+b2+b3 < 1, got {0:?}")]
    BadBath([f64; 3]),
    #[error("scale N must be >= 1")]
    BadScale,
}

/// Validation caveats that do not make the generator ill-defined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamWarning {
    /// The model is usually studied with `lambda2 < lambda1` (slowed
    /// fertility at doubly occupied sites); the dynamics is well-defined
    /// either way.
    Lambda2NotSlower,
    /// Some bath density is zero, so the corresponding face never injects
    /// that species.
    DegenerateBath,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Birth rate contributed by each neighbouring wild-only site.
    pub lambda1: f64,
    /// Birth rate contributed by each neighbouring doubly occupied site.
    pub lambda2: f64,
    /// Sterile release rate.
    pub r: f64,
    /// Bath densities at the reservoir faces.
    pub b_hat: BoundaryProfile,
    /// The `N` entering the diffusive `N^2` speed-up of the exchange and
    /// boundary channels. Independent of the lattice half-width so tiny
    /// lattices can run at unit scale.
    pub scale_n: u32,
    pub reaction_on: bool,
    pub exchange_on: bool,
    pub boundary_on: bool,
}

impl ModelParams {
    pub fn new(lambda1: f64, lambda2: f64, r: f64, b: [f64; 3], scale_n: u32) -> Self {
        Self {
            lambda1,
            lambda2,
            r,
            b_hat: BoundaryProfile::constant(b),
            scale_n,
            reaction_on: true,
            exchange_on: true,
            boundary_on: true,
        }
    }

    /// `N^2`, the speed-up shared by the exchange and boundary channels.
    #[inline]
    pub fn sq_scale(&self) -> f64 {
        let n = self.scale_n as f64;
        n * n
    }

    pub fn validate(&self) -> Result<Vec<ParamWarning>, ParamError> {
        for (name, value) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("r", self.r),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(ParamError::BadRate { name, value });
            }
        }
        if self.scale_n == 0 {
            return Err(ParamError::BadScale);
        }
        let mut warnings = Vec::new();
        for face in [Face::Minus, Face::Plus] {
            let b = self.b_hat.eval(face);
            let sum: f64 = b.iter().sum();
            if b.iter().any(|&x| !x.is_finite() || x < 0.0) || sum >= 1.0 {
                return Err(ParamError::BadBath(b));
            }
            if b.contains(&0.0) && !warnings.contains(&ParamWarning::DegenerateBath) {
                warnings.push(ParamWarning::DegenerateBath);
            }
        }
        if self.lambda2 >= self.lambda1 && self.lambda2 > 0.0 {
            warnings.push(ParamWarning::Lambda2NotSlower);
        }
        Ok(warnings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_standard_params() {
        let p = ModelParams::new(2.0, 1.0, 0.5, [0.3, 0.2, 0.1], 10);
        assert_eq!(p.validate().unwrap(), vec![]);
        assert_eq!(p.sq_scale(), 100.0);
    }

    #[test]
    fn warns_on_fast_lambda2_but_accepts() {
        let p = ModelParams::new(1.0, 3.0, 0.5, [0.3, 0.2, 0.1], 1);
        let warnings = p.validate().unwrap();
        assert!(warnings.contains(&ParamWarning::Lambda2NotSlower));
    }

    #[test]
    fn rejects_bad_bath() {
        let p = ModelParams::new(1.0, 0.5, 0.5, [0.5, 0.4, 0.2], 1);
        assert!(matches!(p.validate(), Err(ParamError::BadBath(_))));
        let p = ModelParams::new(1.0, 0.5, 0.5, [-0.1, 0.2, 0.2], 1);
        assert!(matches!(p.validate(), Err(ParamError::BadBath(_))));
    }

    #[test]
    fn rejects_negative_rates() {
        let p = ModelParams::new(-1.0, 0.5, 0.5, [0.1, 0.1, 0.1], 1);
        assert!(p.validate().is_err());
    }

    #[test]
    fn zero_bath_warns() {
        let p = ModelParams::new(2.0, 1.0, 0.5, [0.0, 0.0, 0.0], 1);
        let warnings = p.validate().unwrap();
        assert!(warnings.contains(&ParamWarning::DegenerateBath));
    }
}

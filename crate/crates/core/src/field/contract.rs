//! Radial contraction of unbounded space into the ball of radius 2.

use glam::{DMat3, DVec3};

use crate::error::{Error, Result};

/// Piecewise radial contraction: identity inside the unit ball,
/// `(2 - 1/|x|) * x/|x|` outside.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ContractionMap;

impl ContractionMap {
    pub fn apply(&self, x: DVec3) -> Result<DVec3> {
        contract(x)
    }

    pub fn invert(&self, y: DVec3) -> Result<DVec3> {
        uncontract(y)
    }
}

pub fn contract(x: DVec3) -> Result<DVec3> {
    if !x.is_finite() {
        return Err(Error::InvalidInput(format!("contract: non-finite point {x:?}")));
    }
    Ok(contract_unchecked(x))
}

#[inline]
pub(crate) fn contract_unchecked(x: DVec3) -> DVec3 {
    let r = x.length();
    if r <= 1.0 {
        x
    } else {
        x * ((2.0 - 1.0 / r) / r)
    }
}

/// Inverse of [`contract`] on the open ball of radius 2.
pub fn uncontract(y: DVec3) -> Result<DVec3> {
    let r = y.length();
    if !y.is_finite() || r >= 2.0 {
        return Err(Error::InvalidInput(format!("uncontract: {y:?} outside the contracted ball")));
    }
    if r <= 1.0 {
        return Ok(y);
    }
    // |x| = 1 / (2 - r)
    Ok(y * (1.0 / ((2.0 - r) * r)))
}

/// Jacobian d contract / d x, row i = d y_i / d x.
pub fn contract_jacobian(x: DVec3) -> DMat3 {
    let r = x.length();
    if r <= 1.0 {
        return DMat3::IDENTITY;
    }
    let s = 2.0 / r - 1.0 / (r * r);
    let ds = -2.0 / (r * r) + 2.0 / (r * r * r);
    let u = x / r;
    // s I + ds * x u^T  (column-major: column j = s e_j + ds * x * u_j)
    DMat3::from_cols(
        DVec3::X * s + x * (ds * u.x),
        DVec3::Y * s + x * (ds * u.y),
        DVec3::Z * s + x * (ds * u.z),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_points_and_outer_value() {
        assert_eq!(contract(DVec3::ZERO).unwrap(), DVec3::ZERO);
        assert_eq!(contract(DVec3::X).unwrap(), DVec3::X);
        let y = contract(DVec3::new(3.0, 0.0, 0.0)).unwrap();
        assert!((y.x - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(y.y, 0.0);
        assert_eq!(y.z, 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(contract(DVec3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(contract(DVec3::new(f64::INFINITY, 0.0, 0.0)).is_err());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let h = 1e-6;
        for x in [DVec3::new(0.3, -0.2, 0.1), DVec3::new(2.0, -1.0, 0.5), DVec3::new(-7.0, 3.0, 11.0)] {
            let j = contract_jacobian(x);
            for k in 0..3 {
                let mut e = DVec3::ZERO;
                e[k] = h;
                let fd = (contract_unchecked(x + e) - contract_unchecked(x - e)) / (2.0 * h);
                let col = j.col(k);
                assert!((fd - col).length() < 1e-7 * (1.0 + col.length()), "{fd:?} vs {col:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn bounded_and_invertible(x in -1e4f64..1e4, y in -1e4f64..1e4, z in -1e4f64..1e4) {
            let p = DVec3::new(x, y, z);
            let c = contract(p).unwrap();
            prop_assert!(c.length() < 2.0);
            if p.length() <= 1.0 {
                prop_assert_eq!(c, p);
            }
            let back = uncontract(c).unwrap();
            prop_assert!((back - p).length() <= 1e-9 * (1.0 + p.length() * p.length()));
        }

        #[test]
        fn radially_monotone(r in 1.0f64..1e3, dr in 1e-3f64..10.0) {
            let a = contract(DVec3::new(r, 0.0, 0.0)).unwrap().length();
            let b = contract(DVec3::new(r + dr, 0.0, 0.0)).unwrap().length();
            prop_assert!(b > a);
            prop_assert!(b < 2.0);
        }
    }
}

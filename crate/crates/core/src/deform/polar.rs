use nalgebra::Matrix3;

use super::JacobianField;
use crate::error::{Error, Result};

/// `J = Q W` with `Q` orthogonal and `W` symmetric positive definite.
///
/// Computed from the SVD `J = U Σ Vᵀ` as `Q = U Vᵀ`, `W = V Σ Vᵀ`; then
/// `det Q = sign(det J)`.
pub fn polar_decompose(j: &Matrix3<f64>) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let svd = j.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::SingularJacobian { faces: Vec::new() }),
    };
    let s = svd.singular_values;
    let smax = s.max();
    if !(s.min() > 1e-12 * smax) {
        return Err(Error::SingularJacobian { faces: Vec::new() });
    }
    let q = u * vt;
    let w = vt.transpose() * Matrix3::from_diagonal(&s) * vt;
    Ok((q, 0.5 * (w + w.transpose())))
}

/// Orthogonal polar factor of every face; fails listing all singular faces.
pub fn polar_rotations(field: &JacobianField) -> Result<Vec<Matrix3<f64>>> {
    let mut out = Vec::with_capacity(field.len());
    let mut bad = Vec::new();
    for (f, j) in field.as_slice().iter().enumerate() {
        match polar_decompose(j) {
            Ok((q, _)) => out.push(q),
            Err(_) => bad.push(f),
        }
    }
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(Error::SingularJacobian { faces: bad })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use proptest::prelude::*;

    #[test]
    fn rotation_and_scale() {
        let r = shapes::random_rotation(1);
        let (q, w) = polar_decompose(&r).unwrap();
        assert!((q - r).norm() < 1e-12);
        assert!((w - Matrix3::identity()).norm() < 1e-12);
        let (q, w) = polar_decompose(&(Matrix3::identity() * 2.0)).unwrap();
        assert!((q - Matrix3::identity()).norm() < 1e-12);
        assert!((w - Matrix3::identity() * 2.0).norm() < 1e-12);
    }

    #[test]
    fn singular_input_is_rejected() {
        let j = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        assert!(polar_decompose(&j).is_err());
        let field = JacobianField::new(vec![Matrix3::identity(), j, Matrix3::identity(), j]);
        match polar_rotations(&field) {
            Err(Error::SingularJacobian { faces }) => assert_eq!(faces, vec![1, 3]),
            other => panic!("{other:?}"),
        }
    }

    fn spd(a: [f64; 6]) -> Matrix3<f64> {
        let l = Matrix3::new(a[0], 0.0, 0.0, a[1], a[2], 0.0, a[3], a[4], a[5]);
        l * l.transpose() + 0.1 * Matrix3::identity()
    }

    proptest! {
        #[test]
        fn recovers_rotation_times_spd(seed in 0u64..10_000, a in prop::array::uniform6(-1.0f64..1.0)) {
            let r = shapes::random_rotation(seed);
            let s = spd(a);
            let (q, w) = polar_decompose(&(r * s)).unwrap();
            prop_assert!((q - r).norm() < 1e-8);
            prop_assert!((w - s).norm() < 1e-8 * s.norm());
        }

        #[test]
        fn factor_properties(m in prop::array::uniform9(-2.0f64..2.0)) {
            let j = Matrix3::from_row_slice(&m);
            prop_assume!(j.determinant().abs() > 1e-3);
            let (q, w) = polar_decompose(&j).unwrap();
            prop_assert!((q * w - j).norm() < 1e-10 * j.norm().max(1.0));
            prop_assert!((q.transpose() * q - Matrix3::identity()).norm() < 1e-10);
            prop_assert!((w - w.transpose()).norm() < 1e-12 * w.norm());
            prop_assert!(w.symmetric_eigenvalues().min() > 0.0);
            prop_assert!((q.determinant() - j.determinant().signum()).abs() < 1e-10);
        }
    }
}

use nalgebra::{Matrix2, SymmetricEigen, Vector2};

use super::{ArmModel, DynamicsError};

/// `|det(J K Jᵀ)|` below this is treated as a singular configuration.
pub const SINGULARITY_TOLERANCE: f64 = 1e-9;

/// Eigen-structure of the tip compliance `(J K Jᵀ)⁻¹`, largest axis first.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceEllipsoid {
    pub q: Vec<f64>,
    pub semi_axes: [f64; 2],
    pub directions: [Vector2<f64>; 2],
}

pub fn compliance_matrix(model: &ArmModel, q: &[f64]) -> Result<Matrix2<f64>, DynamicsError> {
    let j = model.jacobian(q)?;
    let jkj = &j * model.stiffness_matrix() * j.transpose();
    let jkj = Matrix2::new(jkj[(0, 0)], jkj[(0, 1)], jkj[(1, 0)], jkj[(1, 1)]);
    let det = jkj.determinant();
    if !(det.abs() >= SINGULARITY_TOLERANCE) {
        return Err(DynamicsError::SingularConfiguration { det });
    }
    jkj.try_inverse().ok_or(DynamicsError::SingularConfiguration { det })
}

pub fn compliance_ellipsoid(model: &ArmModel, q: &[f64]) -> Result<ComplianceEllipsoid, DynamicsError> {
    let c = compliance_matrix(model, q)?;
    // Symmetrize away rounding before the eigen solve.
    let c = (c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut pairs: Vec<(f64, Vector2<f64>)> = (0..2)
        .map(|i| {
            let mut d: Vector2<f64> = eig.eigenvectors.column(i).into_owned().normalize();
            // Sign convention: first non-negligible component positive.
            let lead = if d.x.abs() > 1e-12 { d.x } else { d.y };
            if lead < 0.0 {
                d = -d;
            }
            (eig.eigenvalues[i], d)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    if pairs.iter().any(|(v, _)| !(*v > 0.0)) {
        return Err(DynamicsError::SingularConfiguration { det: c.determinant() });
    }
    Ok(ComplianceEllipsoid {
        q: q.to_vec(),
        semi_axes: [pairs[0].0, pairs[1].0],
        directions: [pairs[0].1, pairs[1].1],
    })
}

/// One configuration of a sweep; `None` marks a singular configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceRow {
    pub q: Vec<f64>,
    pub ellipsoid: Option<ComplianceEllipsoid>,
}

/// Ellipsoids over a list of configurations. Singular configurations are
/// recorded rather than aborting the sweep; any other error does abort.
pub fn compliance_sweep(model: &ArmModel, configurations: &[Vec<f64>]) -> Result<Vec<ComplianceRow>, DynamicsError> {
    configurations
        .iter()
        .map(|q| match compliance_ellipsoid(model, q) {
            Ok(e) => Ok(ComplianceRow { q: q.clone(), ellipsoid: Some(e) }),
            Err(DynamicsError::SingularConfiguration { .. }) => Ok(ComplianceRow { q: q.clone(), ellipsoid: None }),
            Err(e) => Err(e),
        })
        .collect()
}

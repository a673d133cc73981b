//! 3×3 lattice helpers. Cells are stored with lattice vectors as rows, so
//! Cartesian positions are `frac · cell`.

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn inverse(m: &Mat3) -> Result<Mat3> {
    let d = det(m);
    if d.abs() <= 1e-12 {
        return Err(Error::Numeric(format!("singular cell (det = {d:e})")));
    }
    let inv_d = 1.0 / d;
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, e) = ((i + 1) % 3, (i + 2) % 3);
            // cofactor transpose
            out[i][j] = (m[a][c] * m[b][e] - m[a][e] * m[b][c]) * inv_d;
        }
    }
    Ok(out)
}

/// Row vector times matrix.
pub fn vec_mat(v: &Vec3, m: &Mat3) -> Vec3 {
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        *o = v[0] * m[0][j] + v[1] * m[1][j] + v[2] * m[2][j];
    }
    out
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn volume(cell: &Mat3) -> f64 {
    det(cell).abs()
}

pub fn to_fractional(cart: &[Vec3], cell: &Mat3) -> Result<Vec<Vec3>> {
    let inv = inverse(cell)?;
    Ok(cart.iter().map(|r| vec_mat(r, &inv)).collect())
}

pub fn to_cartesian(frac: &[Vec3], cell: &Mat3) -> Vec<Vec3> {
    frac.iter().map(|f| vec_mat(f, cell)).collect()
}

pub fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

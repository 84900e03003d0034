//! Small dense linear algebra for 13x13 symmetric matrices.

/// Feature dimensionality used throughout the crate.
pub const DIM: usize = 13;

pub type Vec13 = [f64; DIM];
pub type Mat13 = [[f64; DIM]; DIM];

pub fn dot(a: &Vec13, b: &Vec13) -> f64 {
    let mut s = 0.0;
    for i in 0..DIM {
        s += a[i] * b[i];
    }
    s
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// `eigenvectors[i]` is the unit eigenvector for `eigenvalues[i]`. The sweep
/// count is fixed and generous for 13x13; off-diagonal mass converges
/// quadratically, so the rotations reach machine precision long before the
/// limit.
pub fn symmetric_eigen(a: &Mat13) -> (Vec13, Mat13) {
    let mut m = *a;
    // v starts as identity and accumulates rotations; row i ends up as the
    // i-th eigenvector.
    let mut v: Mat13 = [[0.0; DIM]; DIM];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..DIM {
            for q in (p + 1)..DIM {
                off += m[p][q] * m[p][q];
            }
        }
        if off <= 1e-30 {
            break;
        }
        for p in 0..DIM {
            for q in (p + 1)..DIM {
                if m[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..DIM {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..DIM {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..DIM {
                    let vpk = v[p][k];
                    let vqk = v[q][k];
                    v[p][k] = c * vpk - s * vqk;
                    v[q][k] = s * vpk + c * vqk;
                }
            }
        }
    }

    let mut order: [usize; DIM] = core::array::from_fn(|i| i);
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());

    let mut values = [0.0; DIM];
    let mut vectors = [[0.0; DIM]; DIM];
    for (rank, &i) in order.iter().enumerate() {
        values[rank] = m[i][i];
        vectors[rank] = v[i];
    }
    (values, vectors)
}

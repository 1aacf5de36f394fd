//! Dense symmetric eigendecomposition and principal component analysis.
//!
//! The eigensolver is the classic Householder tridiagonalization followed by
//! implicit QL iterations. PCA diagonalizes whichever of the covariance
//! (`d x d`) or Gram (`m x m`) matrix is smaller, so wide feature matrices
//! (thousands of dimensions, hundreds of samples) stay cheap.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("input has zero dimensions")]
    Empty,
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Unit eigenvectors, `vectors[i]` pairs with `values[i]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Decomposes the symmetric `n x n` row-major matrix `a`. Only the lower
/// triangle is read.
pub fn symmetric_eigen(a: &[f64], n: usize) -> SymmetricEigen {
    assert_eq!(a.len(), n * n, "matrix must be n x n");
    if n == 0 {
        return SymmetricEigen {
            values: Vec::new(),
            vectors: Vec::new(),
        };
    }
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if j <= i { a[i * n + j] } else { a[j * n + i] })
                .collect()
        })
        .collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e);
    // columns of v are the accumulated transforms; work on rows from here on
    let mut vt: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    drop(v);
    tridiagonal_ql(&mut vt, &mut d, &mut e);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]).then(i.cmp(&j)));
    SymmetricEigen {
        values: order.iter().map(|&i| d[i]).collect(),
        vectors: order.iter().map(|&i| std::mem::take(&mut vt[i])).collect(),
    }
}

/// Householder reduction to tridiagonal form. On return `d` holds the
/// diagonal, `e[1..]` the sub-diagonal and `v` the orthogonal transform.
fn tridiagonalize(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    d.copy_from_slice(&v[n - 1]);
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in &mut e[..i] {
                *ej = 0.0;
            }
            for j in 0..i {
                let f = d[j];
                v[j][i] = f;
                let mut g = e[j] + v[j][j] * f;
                for k in j + 1..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for row in v.iter_mut().take(i + 1) {
            row[i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal matrix. `vt` holds the transform with
/// eigenvectors as rows; they are rotated in place.
fn tridiagonal_ql(vt: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            loop {
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..n] {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = vt.split_at_mut(i + 1);
                    let (vi, vi1) = (&mut lo[i], &mut hi[0]);
                    for (a, b) in vi.iter_mut().zip(vi1.iter_mut()) {
                        let hb = *b;
                        *b = s * *a + c * hb;
                        *a = c * *a - s * hb;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize the reduction
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Principal axes of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Orthonormal axes sorted by descending variance. Each axis has its
    /// largest-magnitude entry positive.
    pub axes: Vec<Vec<f64>>,
    /// Sample variance (divisor `m - 1`) along each axis.
    pub variances: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

/// Fits principal axes to `samples` (one vector per sample).
///
/// When the dimension exceeds the sample count only axes with non-negligible
/// variance are returned; otherwise all `d` axes are.
pub fn pca(samples: &[Vec<f64>]) -> Result<Pca, LinalgError> {
    let m = samples.len();
    if m < 2 {
        return Err(LinalgError::InsufficientSamples(m));
    }
    let d = samples[0].len();
    if d == 0 {
        return Err(LinalgError::Empty);
    }
    for s in samples {
        if s.len() != d {
            return Err(LinalgError::DimensionMismatch {
                expected: d,
                found: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
    }

    let mut mean = vec![0.0; d];
    for s in samples {
        for (a, v) in mean.iter_mut().zip(s) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= m as f64;
    }
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(v, mu)| v - mu).collect())
        .collect();
    let denom = (m - 1) as f64;
    let total_variance = centered.iter().map(|row| dot(row, row)).sum::<f64>() / denom;

    let (mut axes, variances) = if d <= m {
        let mut cov = vec![0.0; d * d];
        for row in &centered {
            for i in 0..d {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                let dst = &mut cov[i * d..i * d + i + 1];
                for (c, rj) in dst.iter_mut().zip(&row[..=i]) {
                    *c += ri * rj;
                }
            }
        }
        for c in &mut cov {
            *c /= denom;
        }
        let eig = symmetric_eigen(&cov, d);
        let variances = eig.values.iter().map(|&l| l.max(0.0)).collect();
        (eig.vectors, variances)
    } else {
        let mut gram = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..=i {
                gram[i * m + j] = dot(&centered[i], &centered[j]) / denom;
            }
        }
        let eig = symmetric_eigen(&gram, m);
        let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
        let mut axes = Vec::new();
        let mut variances = Vec::new();
        for (lambda, u) in eig.values.iter().zip(&eig.vectors) {
            if *lambda <= 1e-10 * top || *lambda <= 0.0 {
                break;
            }
            let norm = (denom * lambda).sqrt();
            let mut axis = vec![0.0; d];
            for (row, ui) in centered.iter().zip(u) {
                let w = ui / norm;
                for (a, r) in axis.iter_mut().zip(row) {
                    *a += w * r;
                }
            }
            axes.push(axis);
            variances.push(*lambda);
        }
        (axes, variances)
    };

    for axis in &mut axes {
        fix_sign(axis);
    }
    Ok(Pca {
        mean,
        axes,
        variances,
        total_variance,
    })
}

/// Flips `axis` so its largest-magnitude entry (first one on ties) is positive.
pub(crate) fn fix_sign(axis: &mut [f64]) {
    let mut best = 0;
    for (i, v) in axis.iter().enumerate() {
        if v.abs() > axis[best].abs() {
            best = i;
        }
    }
    if axis.get(best).is_some_and(|v| *v < 0.0) {
        for v in axis.iter_mut() {
            *v = -*v;
        }
    }
}

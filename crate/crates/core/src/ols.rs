//! Least-squares regression with an intercept.
//!
//! Two routes are provided. [`ols`] works on the raw columns through a
//! Householder QR of the centered design and is the accurate reference.
//! [`CrossProducts`] caches the centered cross-product matrix of a table once
//! and answers any (response, regressors) query from it with a small Cholesky
//! solve; the structure search issues hundreds of thousands of such queries.

use nalgebra::{DMatrix, DVector, DVectorView};

/// Why a regression could not be carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OlsFailure {
    /// The response column is constant.
    ZeroVarianceResponse,
    /// The regressors (plus intercept) are collinear.
    RankDeficient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub intercept: f64,
    pub coeffs: Vec<f64>,
    /// Residual sum of squares.
    pub rss: f64,
    /// Total (centered) sum of squares of the response.
    pub tss: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn r_squared(&self) -> f64 {
        1.0 - self.rss / self.tss
    }

    /// Maximum-likelihood noise variance `rss / n`.
    pub fn ml_variance(&self) -> f64 {
        self.rss / self.n as f64
    }
}

const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares of `y` on `xs` with an intercept.
pub fn ols(y: DVectorView<'_, f64>, xs: &[DVectorView<'_, f64>]) -> Result<OlsFit, OlsFailure> {
    let n = y.len();
    let p = xs.len();
    let ybar = y.mean();
    let yc: DVector<f64> = y.add_scalar(-ybar);
    let tss = yc.norm_squared();
    if tss == 0.0 || (tss / n as f64).sqrt() <= 1e-13 * ybar.abs() {
        return Err(OlsFailure::ZeroVarianceResponse);
    }
    if p == 0 {
        return Ok(OlsFit {
            intercept: ybar,
            coeffs: Vec::new(),
            rss: tss,
            tss,
            n,
        });
    }
    if n <= p {
        return Err(OlsFailure::RankDeficient);
    }
    let means: Vec<f64> = xs.iter().map(|x| x.mean()).collect();
    let mut xc = DMatrix::zeros(n, p);
    for (k, x) in xs.iter().enumerate() {
        let mut col = xc.column_mut(k);
        col.copy_from(x);
        col.add_scalar_mut(-means[k]);
    }
    let norms: Vec<f64> = xc.column_iter().map(|c| c.norm()).collect();
    let qr = xc.clone().qr();
    let r = qr.r();
    let rmax = norms.iter().cloned().fold(0.0, f64::max);
    for k in 0..p {
        if norms[k] == 0.0 || r[(k, k)].abs() <= RANK_TOL * norms[k].max(RANK_TOL * rmax) {
            return Err(OlsFailure::RankDeficient);
        }
    }
    let mut qty = yc.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, p).into_owned();
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or(OlsFailure::RankDeficient)?;
    let resid = &yc - &xc * &beta;
    let rss = resid.norm_squared();
    let intercept = ybar - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(OlsFit {
        intercept,
        coeffs: beta.iter().copied().collect(),
        rss,
        tss,
        n,
    })
}

/// Column means and centered cross products `sum_i (x_ij - m_j)(x_ik - m_k)`.
#[derive(Debug, Clone)]
pub struct CrossProducts {
    n: usize,
    means: Vec<f64>,
    cross: DMatrix<f64>,
}

impl CrossProducts {
    pub fn new(values: &DMatrix<f64>) -> Self {
        let n = values.nrows();
        let means: Vec<f64> = values.column_iter().map(|c| c.mean()).collect();
        let mut centered = values.clone();
        for (j, mut c) in centered.column_iter_mut().enumerate() {
            c.add_scalar_mut(-means[j]);
        }
        let cross = centered.tr_mul(&centered);
        Self { n, means, cross }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }

    /// Regression of column `y` on columns `xs`, solved from the cached moments.
    pub fn regress(&self, y: usize, xs: &[usize]) -> Result<OlsFit, OlsFailure> {
        let syy = self.cross[(y, y)];
        if !(syy > 0.0) || (syy / self.n as f64).sqrt() <= 1e-13 * self.means[y].abs() {
            return Err(OlsFailure::ZeroVarianceResponse);
        }
        let p = xs.len();
        if p == 0 {
            return Ok(OlsFit {
                intercept: self.means[y],
                coeffs: Vec::new(),
                rss: syy,
                tss: syy,
                n: self.n,
            });
        }
        if self.n <= p {
            return Err(OlsFailure::RankDeficient);
        }
        // Work on the correlation scale so the pivot tolerance is relative.
        let mut d = Vec::with_capacity(p);
        for &k in xs {
            let skk = self.cross[(k, k)];
            if !(skk > 0.0) {
                return Err(OlsFailure::RankDeficient);
            }
            d.push(skk.sqrt());
        }
        let mut a = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        for (r, &i) in xs.iter().enumerate() {
            for (c, &j) in xs.iter().enumerate() {
                a[(r, c)] = self.cross[(i, j)] / (d[r] * d[c]);
            }
            b[r] = self.cross[(i, y)] / d[r];
        }
        let l = cholesky_lower(&a).ok_or(OlsFailure::RankDeficient)?;
        let z = l.solve_lower_triangular(&b).ok_or(OlsFailure::RankDeficient)?;
        let w = l.tr_solve_lower_triangular(&z).ok_or(OlsFailure::RankDeficient)?;
        let coeffs: Vec<f64> = (0..p).map(|r| w[r] / d[r]).collect();
        // rss = syy - b' A^-1 b = syy - |z|^2 on the scaled system.
        let rss = (syy - z.norm_squared()).max(0.0);
        let intercept = self.means[y] - coeffs.iter().zip(xs).map(|(c, &k)| c * self.means[k]).sum::<f64>();
        Ok(OlsFit {
            intercept,
            coeffs,
            rss,
            tss: syy,
            n: self.n,
        })
    }
}

/// Cholesky factor of a unit-diagonal SPD matrix; `None` when a pivot falls
/// below the rank tolerance.
/// Factorization of one regression, reused to score that regression with one
/// more regressor appended.
#[derive(Debug, Clone)]
pub struct RegressionExtender<'a> {
    cp: &'a CrossProducts,
    y: usize,
    xs: Vec<usize>,
    /// Lower Cholesky factor of the scaled regressor cross products, row-major.
    l: Vec<f64>,
    scale: Vec<f64>,
    z: Vec<f64>,
    rss: f64,
    buf: Vec<f64>,
}

impl<'a> RegressionExtender<'a> {
    pub fn rss(&self) -> f64 {
        self.rss
    }

    /// Residual sum of squares after adding column `k`. `None` when the
    /// new column is (numerically close to) collinear with the current ones.
    pub fn rss_with(&mut self, k: usize, min_pivot: f64) -> Option<f64> {
        let c = &self.cp.cross;
        let skk = c[(k, k)];
        if !(skk > 0.0) {
            return None;
        }
        let dk = skk.sqrt();
        let p = self.xs.len();
        let mut vv = 0.0;
        let mut vz = 0.0;
        for r in 0..p {
            let mut s = c[(self.xs[r], k)] / (self.scale[r] * dk);
            for t in 0..r {
                s -= self.l[r * p + t] * self.buf[t];
            }
            let v = s / self.l[r * p + r];
            self.buf[r] = v;
            vv += v * v;
            vz += v * self.z[r];
        }
        let pivot = 1.0 - vv;
        if !(pivot > min_pivot) {
            return None;
        }
        let zk = (c[(k, self.y)] / dk - vz) / pivot.sqrt();
        Some((self.rss - zk * zk).max(0.0))
    }
}

impl CrossProducts {
    /// Factorizes the regression of `y` on `xs` for repeated one-column
    /// extensions; `None` when the base regression is rank deficient.
    pub fn extender(&self, y: usize, xs: &[usize]) -> Option<RegressionExtender<'_>> {
        let p = xs.len();
        let mut scale = Vec::with_capacity(p);
        for &k in xs {
            let skk = self.cross[(k, k)];
            if !(skk > 0.0) {
                return None;
            }
            scale.push(skk.sqrt());
        }
        let syy = self.cross[(y, y)];
        let mut l = vec![0.0; p * p];
        let mut z = vec![0.0; p];
        for j in 0..p {
            let mut d = 1.0;
            for t in 0..j {
                d -= l[j * p + t] * l[j * p + t];
            }
            if d <= RANK_TOL {
                return None;
            }
            let djj = d.sqrt();
            l[j * p + j] = djj;
            for i in (j + 1)..p {
                let mut s = self.cross[(xs[i], xs[j])] / (scale[i] * scale[j]);
                for t in 0..j {
                    s -= l[i * p + t] * l[j * p + t];
                }
                l[i * p + j] = s / djj;
            }
            let mut s = self.cross[(xs[j], y)] / scale[j];
            for t in 0..j {
                s -= l[j * p + t] * z[t];
            }
            z[j] = s / djj;
        }
        let rss = (syy - z.iter().map(|v| v * v).sum::<f64>()).max(0.0);
        Some(RegressionExtender {
            cp: self,
            y,
            xs: xs.to_vec(),
            l,
            scale,
            z,
            rss,
            buf: vec![0.0; p],
        })
    }
}

fn cholesky_lower(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = a.nrows();
    let mut l = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= RANK_TOL * a[(j, j)] {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..p {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

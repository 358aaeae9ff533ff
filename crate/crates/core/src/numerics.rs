//! Dense linear algebra, chi-squared quantiles and seeded sampling.
//!
//! Everything here is deterministic given its inputs. Random streams come
//! from ChaCha generators keyed by a 64-bit seed, so a seed maps to the same
//! sequence on every platform and replications can be split across workers
//! without sharing generator state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric: entry ({row}, {col}) differs by {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

// ── Matrix ──────────────────────────────────────────────────────────────

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NumericsError::Shape {
                expected: format!("{} entries", rows * cols),
                got: format!("{} entries", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NumericsError::Shape {
                    expected: format!("rows of length {cols}"),
                    got: format!("row of length {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(NumericsError::Shape {
                expected: format!("vector of length {}", self.cols),
                got: format!("length {}", x.len()),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(NumericsError::Shape {
                expected: format!("{} rows", self.cols),
                got: format!("{} rows", other.rows),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for (o, b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(x, &self.matvec(x)?))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(NumericsError::Shape {
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", other.rows, other.cols),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Adds `scale * x xᵀ` in place. Zero entries of `x` are skipped, which
    /// keeps block-sparse feature vectors cheap.
    pub fn add_outer(&mut self, x: &[f64], scale: f64) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        let nz: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
        for &i in &nz {
            let xi = x[i] * scale;
            for &j in &nz {
                self.data[i * self.cols + j] += xi * x[j];
            }
        }
    }

    pub fn add_diag(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Inner product with four independent accumulators so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

// ── SPD matrices and Cholesky ───────────────────────────────────────────

/// Square symmetric matrix intended to be positive definite.
///
/// Construction checks shape and symmetry; positive definiteness is checked
/// by [`cholesky`], which reports the first failing pivot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct SpdMatrix(Matrix);

impl SpdMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows != m.cols || m.rows == 0 {
            return Err(NumericsError::Shape {
                expected: "non-empty square matrix".into(),
                got: format!("{}x{}", m.rows, m.cols),
            });
        }
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..m.rows {
            for j in (i + 1)..m.cols {
                let diff = (m[(i, j)] - m[(j, i)]).abs();
                if diff > 1e-10 * scale {
                    return Err(NumericsError::NotSymmetric {
                        row: i,
                        col: j,
                        diff,
                    });
                }
            }
        }
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_diag(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

impl TryFrom<Matrix> for SpdMatrix {
    type Error = NumericsError;
    fn try_from(m: Matrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<SpdMatrix> for Matrix {
    fn from(s: SpdMatrix) -> Matrix {
        s.0
    }
}

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    lower: Matrix,
}

pub fn cholesky(a: &SpdMatrix) -> Result<Cholesky> {
    let n = a.dim();
    let a = &a.0;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(NumericsError::NotPositiveDefinite { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(Cholesky { lower: l })
}

/// Cholesky-like factor of a positive semi-definite matrix. Pivots at or
/// below `tol · max diag` are treated as exact zeros and their column is
/// dropped, so `L Lᵀ` reproduces `A` on its range.
pub fn pseudo_cholesky(a: &Matrix, tol: f64) -> Result<Matrix> {
    if a.rows != a.cols {
        return Err(NumericsError::Shape {
            expected: "square matrix".into(),
            got: format!("{}x{}", a.rows, a.cols),
        });
    }
    let n = a.rows;
    let cutoff = tol * a.diag().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -cutoff.max(1e-300) {
            return Err(NumericsError::NotPositiveDefinite { pivot: j, value: d });
        }
        if d <= cutoff {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

impl Cholesky {
    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    /// Solves `L y = b`.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = l.row(i);
            let s = dot(&row[..i], &y[..i]);
            y[i] = (y[i] - s) / row[i];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn backward_solve(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let l = &self.lower;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward_solve(&self.forward_solve(b))
    }

    /// `xᵀ A⁻¹ x` computed as `‖L⁻¹ x‖²`.
    pub fn inv_quad_form(&self, x: &[f64]) -> f64 {
        let y = self.forward_solve(x);
        dot(&y, &y)
    }

    pub fn inverse(&self) -> SpdMatrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // symmetrize against rounding
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = m;
                inv[(j, i)] = m;
            }
        }
        SpdMatrix(inv)
    }

    pub fn reconstruct(&self) -> Matrix {
        self.lower
            .matmul(&self.lower.transpose())
            .expect("square factor")
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|d| d.ln()).sum::<f64>()
    }
}

// ── Special functions ───────────────────────────────────────────────────

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
///
/// Series expansion below `x < a + 1`, Lentz continued fraction for the
/// upper tail otherwise.
pub fn regularized_lower_gamma(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || x.is_nan() {
        return Err(NumericsError::Domain(format!(
            "incomplete gamma needs a > 0 and finite x, got a={a}, x={x}"
        )));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let ln_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..10_000 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        Ok((sum.ln() + ln_prefix).exp().min(1.0))
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (ln_prefix + h.ln()).exp();
        Ok((1.0 - q).clamp(0.0, 1.0))
    }
}

pub fn chi2_cdf(x: f64, df: u32) -> Result<f64> {
    if df == 0 {
        return Err(NumericsError::Domain("chi-squared df must be >= 1".into()));
    }
    regularized_lower_gamma(df as f64 / 2.0, x / 2.0)
}

fn chi2_log_pdf(x: f64, k: f64) -> f64 {
    (k / 2.0 - 1.0) * x.ln() - x / 2.0 - (k / 2.0) * std::f64::consts::LN_2 - ln_gamma(k / 2.0)
}

/// Quantile of the chi-squared distribution with `df` degrees of freedom.
///
/// Safeguarded Newton iteration on the regularized incomplete gamma,
/// started from the Wilson–Hilferty approximation and confined to a
/// bisection bracket.
pub fn chi2_quantile(prob: f64, df: u32) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(NumericsError::Domain(format!(
            "chi-squared quantile needs prob in (0, 1), got {prob}"
        )));
    }
    if df == 0 {
        return Err(NumericsError::Domain("chi-squared df must be >= 1".into()));
    }
    let k = df as f64;

    let mut lo = 0.0_f64;
    let mut hi = k.max(1.0);
    while chi2_cdf(hi, df)? < prob {
        lo = hi;
        hi *= 2.0;
    }

    let z = standard_normal_quantile(prob);
    let h = 2.0 / (9.0 * k);
    let wh = k * (1.0 - h + z * h.sqrt()).powi(3);
    let mut x = if wh > lo && wh < hi { wh } else { 0.5 * (lo + hi) };

    for _ in 0..200 {
        let f = chi2_cdf(x, df)? - prob;
        if f.abs() <= 1e-14 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = chi2_log_pdf(x, k).exp();
        let newton = x - f / pdf;
        x = if pdf > 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo) <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    Ok(x)
}

/// Acklam's rational approximation of the standard normal quantile
/// (relative error below 1.2e-9). Used only to seed root finding.
pub fn standard_normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let plow = 0.024_25;
    if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// `Φ(x) = (1 + sign(x) · P(1/2, x²/2)) / 2`.
pub fn standard_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let p = regularized_lower_gamma(0.5, 0.5 * x * x).unwrap_or(1.0);
    if x >= 0.0 {
        0.5 * (1.0 + p)
    } else {
        0.5 * (1.0 - p)
    }
}

pub fn standard_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// ── Seeds and random streams ────────────────────────────────────────────

/// 64-bit seed for a reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RandomSeed(pub u64);

impl RandomSeed {
    /// Child seed for a labelled sub-stream. Distinct `(self, labels)`
    /// tuples give unrelated seeds.
    pub fn derive(self, labels: &[u64]) -> RandomSeed {
        let mut h = splitmix64(self.0 ^ 0x5851_f42d_4c95_7f2d);
        for (i, l) in labels.iter().enumerate() {
            h = splitmix64(h ^ splitmix64(l.wrapping_add((i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))));
        }
        RandomSeed(h)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for RandomSeed {
    fn from(v: u64) -> Self {
        RandomSeed(v)
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// How `mvn_sample` factors its covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Factorization {
    /// Strict Cholesky; non-SPD input is an error.
    #[default]
    Strict,
    /// Pseudo-factorization accepting zero or rank-deficient covariance.
    Pseudo,
}

/// Draws `count` rows from `N(mean, cov)` as `mean + L z`.
pub fn mvn_sample(
    mean: &[f64],
    cov: &Matrix,
    count: usize,
    seed: RandomSeed,
    factorization: Factorization,
) -> Result<Matrix> {
    let p = mean.len();
    if cov.rows() != p || cov.cols() != p {
        return Err(NumericsError::Shape {
            expected: format!("{p}x{p} covariance"),
            got: format!("{}x{}", cov.rows(), cov.cols()),
        });
    }
    if count == 0 {
        return Err(NumericsError::Domain("sample count must be positive".into()));
    }
    let lower = match factorization {
        Factorization::Strict => cholesky(&SpdMatrix::new(cov.clone())?)?.lower,
        Factorization::Pseudo => pseudo_cholesky(&SpdMatrix::new(cov.clone())?.0, 1e-12)?,
    };
    let mut rng = seed.rng();
    let mut out = Matrix::zeros(count, p);
    let mut z = vec![0.0; p];
    for r in 0..count {
        z.iter_mut().for_each(|v| *v = standard_normal(&mut rng));
        let row = out.row_mut(r);
        for i in 0..p {
            let lrow = lower.row(i);
            row[i] = mean[i] + dot(&lrow[..=i], &z[..=i]);
        }
    }
    Ok(out)
}

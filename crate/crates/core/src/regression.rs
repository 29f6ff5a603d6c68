//! Lagged design matrices and ordinary least squares via Householder QR.
//!
//! Lag columns of autocorrelated streams are strongly collinear, so the normal
//! equations are never formed. Columns are equilibrated to unit norm before the
//! factorisation, the rank test looks at the diagonal of `R`, and the
//! coefficient covariance is `s² (XᵀX)⁻¹ = s² R⁻¹ R⁻ᵀ` computed from the factor.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest tolerated ratio between the biggest and smallest diagonal entry of `R`.
pub const CONDITION_LIMIT: f64 = 1e10;

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from equally long columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Domain("columns have different lengths".into()));
        }
        let data = columns.iter().flatten().copied().collect();
        Ok(Matrix { rows, cols: columns.len(), data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Domain("rows have different lengths".into()));
        }
        let mut m = Matrix::zeros(n, k);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    /// `self · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (j, &vj) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.column(j)) {
                *o += a * vj;
            }
        }
        out
    }
}

/// One regressor stream and the lags of it that enter the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub name: String,
    pub max_lag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub streams: Vec<StreamSpec>,
    pub response: String,
}

impl DesignSpec {
    pub fn column_names(&self) -> Vec<String> {
        self.streams
            .iter()
            .flat_map(|s| (0..=s.max_lag).map(move |l| format!("{}[{}]", s.name, l)))
            .collect()
    }
}

/// Named sequences of one asset, aligned on the same day grid.
/// Missing observations are stored as NaN.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesSet {
    columns: BTreeMap<String, Vec<f64>>,
}

impl SeriesSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, values: Vec<f64>) -> Self {
        self.columns.insert(name.to_string(), values);
        self
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.columns.values().next().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub response: Vec<f64>,
    pub matrix: Matrix,
    pub column_names: Vec<String>,
    /// (series index, day index) of every row.
    pub row_index: Vec<(usize, usize)>,
}

/// Stacks one row per (series, day) for which the response and every lagged
/// regressor are available. Incomplete rows are dropped, never imputed.
/// Columns are stream-major, lag-ascending.
pub fn build_design(series: &[SeriesSet], spec: &DesignSpec) -> Result<Design> {
    let column_names = spec.column_names();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); column_names.len()];
    let mut response = Vec::new();
    let mut row_index = Vec::new();
    for (si, set) in series.iter().enumerate() {
        let y = set
            .get(&spec.response)
            .ok_or_else(|| Error::Domain(format!("missing response stream {}", spec.response)))?;
        let streams = spec
            .streams
            .iter()
            .map(|s| {
                set.get(&s.name)
                    .filter(|v| v.len() == y.len())
                    .ok_or_else(|| Error::Domain(format!("stream {} missing or misaligned", s.name)))
                    .map(|v| (v, s.max_lag))
            })
            .collect::<Result<Vec<_>>>()?;
        let first = spec.streams.iter().map(|s| s.max_lag).max().unwrap_or(0);
        'rows: for t in first..y.len() {
            if !y[t].is_finite() {
                continue;
            }
            for (v, lag) in &streams {
                if (0..=*lag).any(|l| !v[t - l].is_finite()) {
                    continue 'rows;
                }
            }
            let mut c = 0;
            for (v, lag) in &streams {
                for l in 0..=*lag {
                    columns[c].push(v[t - l]);
                    c += 1;
                }
            }
            response.push(y[t]);
            row_index.push((si, t));
        }
    }
    if response.is_empty() {
        return Err(Error::Estimation(
            "no row has a complete lag history; series are too short for the requested lags".into(),
        ));
    }
    Ok(Design { response, matrix: Matrix::from_columns(&columns)?, column_names, row_index })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// RSS / (n - k).
    pub residual_variance: f64,
    /// k × k coefficient covariance.
    pub covariance: Matrix,
    pub n_obs: usize,
}

impl OlsFit {
    pub fn std_error(&self, j: usize) -> f64 {
        self.covariance.get(j, j).max(0.0).sqrt()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn cmp_rows(matrix: &Matrix, y: &[f64], a: usize, b: usize) -> Ordering {
    for j in 0..matrix.cols() {
        match matrix.get(a, j).total_cmp(&matrix.get(b, j)) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    y[a].total_cmp(&y[b])
}

/// Least squares fit of `response` on the columns of `matrix` (no implicit intercept).
///
/// Rows are put into a canonical order first, so the result is bitwise
/// identical under any row permutation.
pub fn ols(response: &[f64], matrix: &Matrix, names: &[String]) -> Result<OlsFit> {
    let (n, k) = (matrix.rows(), matrix.cols());
    if response.len() != n || names.len() != k {
        return Err(Error::Domain(format!(
            "dimension mismatch: {n} rows, {} responses, {k} columns, {} names",
            response.len(),
            names.len()
        )));
    }
    if k == 0 {
        return Err(Error::Domain("design has no columns".into()));
    }
    if n <= k {
        return Err(Error::Estimation(format!("{n} observations cannot identify {k} coefficients")));
    }
    if response.iter().chain(&matrix.data).any(|v| !v.is_finite()) {
        return Err(Error::Domain("design or response contains non-finite values".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp_rows(matrix, response, a, b));
    let mut a = Matrix::zeros(n, k);
    let mut y: Vec<f64> = order.iter().map(|&i| response[i]).collect();
    let mut scale = vec![0.0; k];
    for j in 0..k {
        let src = matrix.column(j);
        let col = a.column_mut(j);
        for (dst, &i) in col.iter_mut().zip(&order) {
            *dst = src[i];
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        scale[j] = norm;
        if norm > 0.0 {
            col.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let x_sorted_scaled = a.clone();

    // Householder QR, applying each reflection to y as we go.
    let mut diag = vec![0.0; k];
    for j in 0..k {
        let norm = a.column(j)[j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[j] = 0.0;
            continue;
        }
        let alpha = if a.get(j, j) > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a.column(j)[j..].to_vec();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv > 0.0 {
            for c in j + 1..k {
                let col = &mut a.column_mut(c)[j..];
                let f = 2.0 * v.iter().zip(col.iter()).map(|(p, q)| p * q).sum::<f64>() / vtv;
                col.iter_mut().zip(&v).for_each(|(q, p)| *q -= f * p);
            }
            let f = 2.0 * v.iter().zip(&y[j..]).map(|(p, q)| p * q).sum::<f64>() / vtv;
            y[j..].iter_mut().zip(&v).for_each(|(q, p)| *q -= f * p);
        }
        diag[j] = alpha;
        a.set(j, j, alpha);
    }

    let dmax = diag.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let bad: Vec<String> = diag
        .iter()
        .enumerate()
        .filter(|(j, d)| scale[*j] == 0.0 || dmax == 0.0 || d.abs() * CONDITION_LIMIT < dmax)
        .map(|(j, _)| names[j].clone())
        .collect();
    if !bad.is_empty() {
        return Err(Error::SingularDesign { columns: bad });
    }

    // R is the upper triangle of `a`; back-substitute R b = Qᵀy.
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for j in i + 1..k {
            s -= a.get(i, j) * beta[j];
        }
        beta[i] = s / a.get(i, i);
    }
    let fitted = x_sorted_scaled.mul_vec(&beta);
    let rss: f64 = order
        .iter()
        .zip(&fitted)
        .map(|(&i, f)| (response[i] - f).powi(2))
        .sum();
    let residual_variance = rss / (n - k) as f64;

    // R⁻¹ (upper triangular), then s² R⁻¹R⁻ᵀ.
    let mut rinv = Matrix::zeros(k, k);
    for c in 0..k {
        rinv.set(c, c, 1.0 / a.get(c, c));
        for i in (0..c).rev() {
            let mut s = 0.0;
            for j in i + 1..=c {
                s += a.get(i, j) * rinv.get(j, c);
            }
            rinv.set(i, c, -s / a.get(i, i));
        }
    }
    let mut covariance = Matrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let s: f64 = (j..k).map(|m| rinv.get(i, m) * rinv.get(j, m)).sum();
            let v = residual_variance * s / (scale[i] * scale[j]);
            covariance.set(i, j, v);
            covariance.set(j, i, v);
        }
    }
    let coefficients = beta.iter().zip(&scale).map(|(b, s)| b / s).collect();
    Ok(OlsFit { names: names.to_vec(), coefficients, residual_variance, covariance, n_obs: n })
}

pub fn ols_design(design: &Design) -> Result<OlsFit> {
    ols(&design.response, &design.matrix, &design.column_names)
}

/// A value with a symmetric 2σ half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub value: f64,
    pub half_width: f64,
}

/// Value and 2σ half-width of the linear functional `wᵀβ`.
pub fn two_sigma_band(fit: &OlsFit, functional: &[f64]) -> Result<Band> {
    let k = fit.coefficients.len();
    if functional.len() != k {
        return Err(Error::Domain(format!("functional has {} entries for {k} coefficients", functional.len())));
    }
    let value = functional.iter().zip(&fit.coefficients).map(|(w, b)| w * b).sum();
    let mut var = 0.0;
    for i in 0..k {
        if functional[i] == 0.0 {
            continue;
        }
        for j in 0..k {
            var += functional[i] * fit.covariance.get(i, j) * functional[j];
        }
    }
    Ok(Band { value, half_width: 2.0 * var.max(0.0).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn single_stream_without_lags_is_the_stream() {
        let set = SeriesSet::new().with("x", vec![1.0, 2.0, 3.0]).with("y", vec![0.0, 0.0, 0.0]);
        let spec = DesignSpec { streams: vec![StreamSpec { name: "x".into(), max_lag: 0 }], response: "y".into() };
        let d = build_design(&[set], &spec).unwrap();
        assert_eq!(d.matrix.cols(), 1);
        assert_eq!(d.matrix.column(0), &[1.0, 2.0, 3.0]);
        assert_eq!(d.column_names, vec!["x[0]"]);
    }

    #[test]
    fn row_count_and_shift_structure() {
        let mut x = vec![0.0; 12];
        x[4] = 7.0;
        let set = SeriesSet::new().with("x", x).with("y", vec![1.0; 12]);
        let spec = DesignSpec { streams: vec![StreamSpec { name: "x".into(), max_lag: 3 }], response: "y".into() };
        let d = build_design(&[set.clone(), set], &spec).unwrap();
        assert_eq!(d.matrix.rows(), 2 * (12 - 3));
        // The impulse appears once per lag column, on successive rows.
        for l in 0..=3 {
            let hits: Vec<usize> = (0..9).filter(|&i| d.matrix.get(i, l) == 7.0).collect();
            assert_eq!(hits, vec![4 - 3 + l]);
        }
    }

    #[test]
    fn incomplete_rows_dropped() {
        let set = SeriesSet::new()
            .with("x", vec![1.0, f64::NAN, 3.0, 4.0, 5.0])
            .with("y", vec![1.0, 1.0, 1.0, 1.0, f64::NAN]);
        let spec = DesignSpec { streams: vec![StreamSpec { name: "x".into(), max_lag: 1 }], response: "y".into() };
        let d = build_design(&[set], &spec).unwrap();
        assert_eq!(d.row_index, vec![(0, 3)]);
    }

    #[test]
    fn too_short_is_estimation_error() {
        let set = SeriesSet::new().with("x", vec![1.0, 2.0]).with("y", vec![1.0, 1.0]);
        let spec = DesignSpec { streams: vec![StreamSpec { name: "x".into(), max_lag: 5 }], response: "y".into() };
        assert!(matches!(build_design(&[set], &spec), Err(Error::Estimation(_))));
    }

    #[test]
    fn exact_linear_response() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v).collect();
        let m = Matrix::from_columns(&[x]).unwrap();
        let fit = ols(&y, &m, &names(1)).unwrap();
        assert_relative_eq!(fit.coefficients[0], 2.5, max_relative = 1e-14);
        assert!(fit.residual_variance < 1e-28);
    }

    #[test]
    fn duplicated_column_is_singular() {
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let z: Vec<f64> = (0..30).map(|i| ((i * 7) % 5) as f64).collect();
        let m = Matrix::from_columns(&[x.clone(), z, x.clone()]).unwrap();
        match ols(&x, &m, &names(3)) {
            Err(Error::SingularDesign { columns }) => assert_eq!(columns, vec!["x2"]),
            other => panic!("expected singular design, got {other:?}"),
        }
    }

    #[test]
    fn zero_column_is_singular() {
        let m = Matrix::from_columns(&[vec![0.0; 10]]).unwrap();
        assert!(matches!(ols(&[1.0; 10], &m, &names(1)), Err(Error::SingularDesign { .. })));
    }

    #[test]
    fn pure_noise_on_orthonormal_design() {
        // Columns are orthonormal, so each coefficient has standard error σ.
        let n = 400;
        let k = 4;
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                (0..n)
                    .map(|i| (2.0 / n as f64).sqrt() * (std::f64::consts::PI * (j + 1) as f64 * (i as f64 + 0.5) / n as f64).cos())
                    .collect()
            })
            .collect();
        let m = Matrix::from_columns(&cols).unwrap();
        let mut rng = crate::rng::stream(11, 0);
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let fit = ols(&y, &m, &names(k)).unwrap();
        for j in 0..k {
            assert!((fit.std_error(j) - 1.0).abs() < 0.1);
            assert!(fit.coefficients[j].abs() < 3.0 * fit.std_error(j));
        }
    }

    #[test]
    fn bands_of_simple_functionals() {
        let mut cov = Matrix::zeros(2, 2);
        cov.set(0, 0, 0.04);
        cov.set(1, 1, 0.09);
        let fit = OlsFit {
            names: names(2),
            coefficients: vec![1.0, 2.0],
            residual_variance: 1.0,
            covariance: cov,
            n_obs: 10,
        };
        let b = two_sigma_band(&fit, &[1.0, 0.0]).unwrap();
        assert_eq!((b.value, b.half_width), (1.0, 2.0 * 0.2));
        let b = two_sigma_band(&fit, &[1.0, 1.0]).unwrap();
        assert_relative_eq!(b.half_width, 2.0 * (0.13f64).sqrt());
        let b = two_sigma_band(&fit, &[0.0, 0.0]).unwrap();
        assert_eq!((b.value, b.half_width), (0.0, 0.0));
        assert!(two_sigma_band(&fit, &[1.0]).is_err());
    }
}

//! Static functional network connectivity: Pearson correlation between
//! detrended component time courses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::MatrixF64;

/// Off-diagonal correlations are clamped to this magnitude before `atanh`.
pub const FISHER_CLAMP: f64 = 1.0 - 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FncConfig {
    pub detrend: bool,
    /// Reserved for a band-pass stage; only `None` is implemented.
    pub bandpass: Option<(f64, f64)>,
}

impl Default for FncConfig {
    fn default() -> Self {
        Self {
            detrend: true,
            bandpass: None,
        }
    }
}

impl FncConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandpass.is_some() {
            return Err(Error::Config("fnc.bandpass is not supported".into()));
        }
        Ok(())
    }
}

/// Symmetric `K × K` correlation matrix with an exact unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct FncMatrix {
    values: MatrixF64,
}

impl FncMatrix {
    pub fn from_matrix(values: MatrixF64) -> Result<Self> {
        let (r, c) = values.shape();
        if r != c {
            return Err(Error::Shape(format!("FNC must be square, got {r}x{c}")));
        }
        values.ensure_finite()?;
        if values.max_asymmetry() > 1e-12 {
            return Err(Error::InvalidInput("FNC is not symmetric".into()));
        }
        for i in 0..r {
            if values.get(i, i) != 1.0 {
                return Err(Error::InvalidInput(format!("FNC diagonal entry {i} is not 1")));
            }
        }
        if values.values().iter().any(|v| v.abs() > 1.0) {
            return Err(Error::InvalidInput("FNC entry outside [-1, 1]".into()));
        }
        Ok(Self { values })
    }

    pub fn k(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn as_matrix(&self) -> &MatrixF64 {
        &self.values
    }

    pub fn into_matrix(self) -> MatrixF64 {
        self.values
    }
}

/// Upper-triangle (row-major) vector, optionally Fisher-z transformed.
#[derive(Debug, Clone, PartialEq)]
pub struct FncVector {
    pub values: Vec<f64>,
    /// Number of entries clamped to `±FISHER_CLAMP` before `atanh`.
    pub clamped: usize,
}

/// Remove each column's least-squares line `a + b t`.
pub fn detrend(tc: &MatrixF64) -> Result<MatrixF64> {
    let (t, k) = tc.shape();
    if t < 3 {
        return Err(Error::InvalidInput(format!("detrend needs at least 3 timepoints, got {t}")));
    }
    let tbar = (t - 1) as f64 / 2.0;
    let sxx: f64 = (0..t).map(|i| (i as f64 - tbar).powi(2)).sum();
    let mut out = tc.clone();
    for j in 0..k {
        let col = tc.column(j);
        let ybar = col.iter().sum::<f64>() / t as f64;
        let sxy: f64 = col.iter().enumerate().map(|(i, y)| (i as f64 - tbar) * (y - ybar)).sum();
        let slope = sxy / sxx;
        for (i, y) in col.iter().enumerate() {
            out.set(i, j, y - ybar - slope * (i as f64 - tbar));
        }
    }
    Ok(out)
}

/// Sample Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("lengths {} and {} differ", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("correlation needs at least 2 samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ZeroVariance("correlation is undefined for a constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Detrend (optional) then correlate every pair of columns.
pub fn compute_fnc_with(tc: &MatrixF64, cfg: &FncConfig) -> Result<FncMatrix> {
    cfg.validate()?;
    let (t, k) = tc.shape();
    if t < 3 || k < 2 {
        return Err(Error::InvalidInput(format!(
            "FNC needs at least 3 timepoints and 2 components, got {t}x{k}"
        )));
    }
    let x = if cfg.detrend { detrend(tc)? } else { tc.clone() };
    // Centre and normalise each column once; correlations are then dot products.
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut c = x.column(j);
        let m = c.iter().sum::<f64>() / t as f64;
        c.iter_mut().for_each(|v| *v -= m);
        let ss: f64 = c.iter().map(|v| v * v).sum();
        let scale = tc.column(j).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(ss.sqrt() > 1e-12 * scale * (t as f64).sqrt()) || ss == 0.0 {
            return Err(Error::ZeroVariance(format!("component {j} time course")));
        }
        let inv = 1.0 / ss.sqrt();
        c.iter_mut().for_each(|v| *v *= inv);
        cols.push(c);
    }
    let mut f = MatrixF64::identity(k);
    for i in 0..k {
        for j in (i + 1)..k {
            let r = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0);
            f.set(i, j, r);
            f.set(j, i, r);
        }
    }
    Ok(FncMatrix { values: f })
}

pub fn compute_fnc(tc: &MatrixF64) -> Result<FncMatrix> {
    compute_fnc_with(tc, &FncConfig::default())
}

/// `atanh` of the full upper triangle.
pub fn fisher_z(f: &FncMatrix) -> FncVector {
    let all: Vec<usize> = (0..f.k()).collect();
    fisher_z_subset(f.as_matrix(), &all)
}

/// `atanh` of the upper triangle restricted to `selected` components, in the
/// order given. Works on any square correlation matrix.
pub fn fisher_z_subset(f: &MatrixF64, selected: &[usize]) -> FncVector {
    let mut values = Vec::with_capacity(selected.len() * selected.len().saturating_sub(1) / 2);
    let mut clamped = 0;
    for (a, &i) in selected.iter().enumerate() {
        for &j in &selected[a + 1..] {
            let r = f.get(i, j);
            let rc = r.clamp(-FISHER_CLAMP, FISHER_CLAMP);
            if rc != r {
                clamped += 1;
            }
            values.push(rc.atanh());
        }
    }
    if clamped > 0 {
        log::warn!("fisher_z: clamped {clamped} correlation(s) to ±(1 - 1e-7)");
    }
    FncVector { values, clamped }
}

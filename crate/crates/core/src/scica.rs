//! Spatially constrained ICA: one reference-anchored FastICA unit per
//! template component.
//!
//! Each subject's BOLD matrix (timepoints × voxels) is normalised per voxel,
//! centred per timepoint, and reduced by PCA to a whitened
//! `pca_retained × voxels` matrix `Z`. A unit `w` (unit norm, whitened space)
//! yields the spatial source `y = wᵀZ`, which has unit variance over voxels.
//! The unit starts at the whitened projection of its reference map and
//! iterates
//!
//! ```text
//! d      = E[z g(y)] − E[g'(y)] w          (negentropy fixed point)
//! w_next = normalise(d̂ + μ_eff ĉ)          (pull toward the reference)
//! ```
//!
//! where `ĉ` is the normalised whitened projection of the reference (so
//! `corr(y, r) = wᵀc`), `d̂` is `d` normalised and oriented along `w`, and
//! `μ_eff = μ (1 − wᵀĉ)` when the weight is adaptive. Units are not
//! decorrelated from each other.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Subject, SubjectFeatures, Template};
use crate::error::{Error, Result};
use crate::matrix::{mean, std_pop, zscore_in_place, MatrixF64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Tanh,
    Cube,
    Gauss,
}

impl Nonlinearity {
    /// `(g(y), g'(y))`.
    #[inline]
    fn eval(self, y: f64) -> (f64, f64) {
        match self {
            Nonlinearity::Tanh => {
                let t = y.tanh();
                (t, 1.0 - t * t)
            }
            Nonlinearity::Cube => (y * y * y, 3.0 * y * y),
            Nonlinearity::Gauss => {
                let e = (-0.5 * y * y).exp();
                (y * e, (1.0 - y * y) * e)
            }
        }
    }
}

/// How voxel time series are scaled before PCA. Both variants remove each
/// voxel's temporal mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VoxelScaling {
    /// Divide each voxel by its own temporal standard deviation.
    ZScore,
    /// Divide every voxel by the root-mean-square over all voxels, which keeps
    /// the data an exact linear mixture of the spatial sources.
    #[default]
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScicaConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub constraint_weight: f64,
    pub adaptive: bool,
    pub nonlinearity: Nonlinearity,
    /// Whitened dimension; `None` uses the template's component count.
    pub pca_retained: Option<usize>,
    pub voxel_scaling: VoxelScaling,
}

impl Default for ScicaConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-6,
            constraint_weight: 1.0,
            adaptive: true,
            nonlinearity: Nonlinearity::Tanh,
            pca_retained: None,
            voxel_scaling: VoxelScaling::Global,
        }
    }
}

impl ScicaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("scica.max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("scica.tol must be > 0".into()));
        }
        if !(self.constraint_weight >= 0.0) || !self.constraint_weight.is_finite() {
            return Err(Error::Config("scica.constraint_weight must be >= 0".into()));
        }
        if self.pca_retained == Some(0) {
            return Err(Error::Config("scica.pca_retained must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct WhitenedData {
    /// `pca_retained × V`; rows zero-mean, identity sample covariance
    /// (divisor `V`).
    pub whitened: MatrixF64,
    /// `T × pca_retained`; `mixing_back · whitened` is the rank-truncated
    /// normalised data.
    pub mixing_back: MatrixF64,
    pub voxel_means: Vec<f64>,
    pub voxel_stds: Vec<f64>,
    /// All eigenvalues of the `T × T` timepoint covariance, descending.
    pub eigenvalues: Vec<f64>,
}

/// Voxel-normalised copy of `bold` (no per-timepoint centring), plus the
/// per-voxel means and scale factors used.
pub fn normalize_voxels(bold: &MatrixF64, scaling: VoxelScaling) -> Result<(MatrixF64, Vec<f64>, Vec<f64>)> {
    let (t, v) = bold.shape();
    if t < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 timepoints, got {t}")));
    }
    let mut means = vec![0.0; v];
    let mut stds = vec![0.0; v];
    for j in 0..v {
        let col = bold.column(j);
        let m = mean(&col);
        let s = std_pop(&col, m);
        let scale = col.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if !(s > 1e-12 * scale) || s == 0.0 {
            return Err(Error::ZeroVarianceVoxel(j));
        }
        means[j] = m;
        stds[j] = s;
    }
    if scaling == VoxelScaling::Global {
        let rms = (stds.iter().map(|s| s * s).sum::<f64>() / v as f64).sqrt();
        stds.iter_mut().for_each(|s| *s = rms);
    }
    let x = MatrixF64::from_fn(t, v, |i, j| (bold.get(i, j) - means[j]) / stds[j]);
    Ok((x, means, stds))
}

/// Normalise voxels, centre each timepoint over voxels, and PCA-whiten to
/// `pca_retained` spatial components.
pub fn preprocess_subject(bold: &MatrixF64, pca_retained: usize, scaling: VoxelScaling) -> Result<WhitenedData> {
    let (t, v) = bold.shape();
    if pca_retained == 0 || pca_retained > (t - 1).min(v) {
        return Err(Error::Config(format!(
            "pca_retained = {pca_retained} must lie in 1..={} for {t} timepoints and {v} voxels",
            (t.saturating_sub(1)).min(v)
        )));
    }
    let (x, voxel_means, voxel_stds) = normalize_voxels(bold, scaling)?;
    let mut xc = x.to_dmatrix();
    for i in 0..t {
        let m = xc.row(i).mean();
        xc.row_mut(i).add_scalar_mut(-m);
    }
    let cov = (&xc * xc.transpose()) / v as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let top = eigenvalues[0];
    let rank = eigenvalues.iter().filter(|&&l| l > 1e-10 * top).count();
    if top <= 0.0 || rank < pca_retained {
        return Err(Error::RankDeficient(format!(
            "data rank {rank} is below pca_retained = {pca_retained}"
        )));
    }
    let mut basis = DMatrix::<f64>::zeros(t, pca_retained);
    for (c, &i) in order.iter().take(pca_retained).enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(i));
    }
    let mut z = basis.transpose() * &xc;
    let mut mixing = basis;
    for c in 0..pca_retained {
        let s = eigenvalues[c].sqrt();
        z.row_mut(c).scale_mut(1.0 / s);
        mixing.column_mut(c).scale_mut(s);
    }
    Ok(WhitenedData {
        whitened: MatrixF64::from_dmatrix(&z),
        mixing_back: MatrixF64::from_dmatrix(&mixing),
        voxel_means,
        voxel_stds,
        eigenvalues,
    })
}

/// Result of one constrained fixed-point step.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitStep {
    pub w: Vec<f64>,
    /// The negentropy direction vanished and `w` was returned unchanged.
    pub degenerate: bool,
}

/// One constrained update of unit `w` (unit norm) against the whitened data
/// `z` and the whitened reference projection `reference_projected`.
pub fn constrained_unit_update(
    w: &[f64],
    z: &MatrixF64,
    reference_projected: &[f64],
    cfg: &ScicaConfig,
) -> UnitStep {
    let zd = z.to_dmatrix();
    constrained_step(w, &zd, reference_projected, cfg)
}

fn constrained_step(w: &[f64], z: &DMatrix<f64>, c: &[f64], cfg: &ScicaConfig) -> UnitStep {
    let k = z.nrows();
    let v = z.ncols() as f64;
    let wv = DVector::from_column_slice(w);
    let y = z.tr_mul(&wv);
    let mut g = DVector::<f64>::zeros(y.len());
    let mut gp_sum = 0.0;
    for (gi, &yi) in g.iter_mut().zip(y.iter()) {
        let (a, b) = cfg.nonlinearity.eval(yi);
        *gi = a;
        gp_sum += b;
    }
    let mut d = (z * g) / v - wv.scale(gp_sum / v);
    let dn = d.norm();
    if !(dn > 1e-12) {
        return UnitStep {
            w: w.to_vec(),
            degenerate: true,
        };
    }
    d /= dn;
    if d.dot(&wv) < 0.0 {
        d.neg_mut();
    }
    let cv = DVector::from_column_slice(c);
    let cn = cv.norm();
    if cfg.constraint_weight > 0.0 && cn > 0.0 {
        let chat = cv / cn;
        let mu = if cfg.adaptive {
            cfg.constraint_weight * (1.0 - wv.dot(&chat)).max(0.0)
        } else {
            cfg.constraint_weight
        };
        d += chat * mu;
    }
    let n = d.norm();
    if !(n > 1e-12) {
        return UnitStep {
            w: w.to_vec(),
            degenerate: true,
        };
    }
    debug_assert_eq!(d.len(), k);
    UnitStep {
        w: (d / n).iter().copied().collect(),
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitReport {
    pub iterations: usize,
    pub converged: bool,
    /// Pearson correlation between the returned map and its reference.
    pub reference_corr: f64,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub features: SubjectFeatures,
    pub units: Vec<UnitReport>,
}

impl Extraction {
    pub fn all_converged(&self) -> bool {
        self.units.iter().all(|u| u.converged)
    }
}

/// Extract subject-specific spatial maps (sign-aligned to the template and
/// z-scored over voxels) and least-squares time courses.
pub fn extract_subject(bold: &MatrixF64, template: &Template, cfg: &ScicaConfig, seed: u64) -> Result<Extraction> {
    cfg.validate()?;
    let v = template.n_voxels();
    if bold.cols() != v {
        return Err(Error::VoxelMismatch {
            subject: String::new(),
            expected: v,
            found: bold.cols(),
        });
    }
    let k = template.n_components();
    let retained = cfg.pca_retained.unwrap_or(k);
    let wd = preprocess_subject(bold, retained, cfg.voxel_scaling)?;
    let z = wd.whitened.to_dmatrix();

    let mut refs = template.maps.clone();
    for i in 0..k {
        if !zscore_in_place(refs.row_mut(i)) {
            return Err(Error::ZeroVariance(format!("template component {i}")));
        }
    }

    let mut maps = MatrixF64::zeros(k, v);
    let mut units = Vec::with_capacity(k);
    for comp in 0..k {
        let r = DVector::from_column_slice(refs.row(comp));
        let c: Vec<f64> = ((&z * r) / v as f64).iter().copied().collect();
        let cn = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut w: Vec<f64> = if cn > 1e-8 {
            c.iter().map(|x| x / cn).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (comp as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let raw: Vec<f64> = (0..retained).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            raw.into_iter().map(|x| x / n).collect()
        };
        let mut converged = false;
        let mut iterations = 0;
        while iterations < cfg.max_iters {
            iterations += 1;
            let step = constrained_step(&w, &z, &c, cfg);
            if step.degenerate {
                converged = true;
                break;
            }
            let overlap: f64 = step.w.iter().zip(&w).map(|(a, b)| a * b).sum();
            w = step.w;
            if overlap.abs() > 1.0 - cfg.tol {
                converged = true;
                break;
            }
        }
        let wv = DVector::from_column_slice(&w);
        let y = z.tr_mul(&wv);
        let row = maps.row_mut(comp);
        row.copy_from_slice(y.as_slice());
        if !zscore_in_place(row) {
            return Err(Error::ZeroVariance(format!("recovered component {comp}")));
        }
        let corr = row.iter().zip(refs.row(comp)).map(|(a, b)| a * b).sum::<f64>() / v as f64;
        if corr < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
        }
        units.push(UnitReport {
            iterations,
            converged,
            reference_corr: corr.abs(),
        });
    }

    let time_courses = regress_time_courses(bold, &maps, cfg.voxel_scaling)?;
    Ok(Extraction {
        features: SubjectFeatures {
            subject_id: String::new(),
            spatial_maps: maps,
            time_courses,
            fnc: None,
        },
        units,
    })
}

/// [`extract_subject`] with the subject id filled in.
pub fn extract_features(subject: &Subject, template: &Template, cfg: &ScicaConfig, seed: u64) -> Result<Extraction> {
    let mut ex = extract_subject(&subject.bold, template, cfg, seed).map_err(|e| match e {
        Error::VoxelMismatch { expected, found, .. } => Error::VoxelMismatch {
            subject: subject.id.clone(),
            expected,
            found,
        },
        e => e,
    })?;
    ex.features.subject_id = subject.id.clone();
    Ok(ex)
}

/// Least-squares time courses `TC = X Sᵀ (S Sᵀ)⁻¹` of the voxel-normalised
/// data `X` on spatial maps `S`.
pub fn regress_time_courses(bold: &MatrixF64, maps: &MatrixF64, scaling: VoxelScaling) -> Result<MatrixF64> {
    let (x, _, _) = normalize_voxels(bold, scaling)?;
    let x = x.to_dmatrix();
    let s = maps.to_dmatrix();
    let gram = &s * s.transpose();
    let rhs = &s * x.transpose(); // K × T
    let sol = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            let svd = gram.svd(true, true);
            svd.solve(&rhs, 1e-12)
                .map_err(|e| Error::RankDeficient(format!("spatial maps: {e}")))?
        }
    };
    Ok(MatrixF64::from_dmatrix(&sol.transpose()))
}

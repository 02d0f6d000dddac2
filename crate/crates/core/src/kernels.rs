//! Subspace (principal-angle) tanh kernel on spatial maps, cosine tanh
//! kernel on Fisher-z FNC, and `N × N` kernel assembly.
//!
//! For orthonormal bases `A`, `B` of two subjects' selected map subspaces the
//! singular values of `AᵀB` are the cosines of the principal angles, and
//! `S(A, B) = Σ σ_k ∈ [0, K_sel]`. The kernel is `tanh(γ S)`.
//!
//! Two routes compute the same kernel: explicit bases (QR per subject, SVD
//! per pair), and a cached cross-Gram route that orthonormalises implicitly
//! with Cholesky factors of the selected Gram blocks. Feature selection uses
//! the cached route.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::SubjectFeatures;
use crate::error::{Error, Result};
use crate::fnc::{fisher_z_subset, FncVector};
use crate::matrix::{write_matrix, MatrixF64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumFix {
    None,
    /// Zero negative eigenvalues.
    #[default]
    Clip,
    /// Add λ to the diagonal.
    Ridge(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PabsKernelParams {
    pub gamma: f64,
    pub fnc_gamma: f64,
    /// Weight of the spatial-map kernel in the SM+FNC combination.
    pub combine_weight: f64,
    pub spectrum_fix: SpectrumFix,
}

impl Default for PabsKernelParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            fnc_gamma: 1.0,
            combine_weight: 0.5,
            spectrum_fix: SpectrumFix::Clip,
        }
    }
}

impl PabsKernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config("kernel.gamma must be > 0".into()));
        }
        if !(self.fnc_gamma > 0.0) || !self.fnc_gamma.is_finite() {
            return Err(Error::Config("kernel.fnc_gamma must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.combine_weight) {
            return Err(Error::Config("kernel.combine_weight must lie in [0, 1]".into()));
        }
        if let SpectrumFix::Ridge(l) = self.spectrum_fix {
            if !(l >= 0.0) {
                return Err(Error::Config("kernel ridge must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Column-orthonormal `V × K_sel` basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    values: MatrixF64,
}

impl Basis {
    /// Wrap a matrix whose columns are already orthonormal (checked to 1e-10).
    pub fn from_orthonormal(values: MatrixF64) -> Result<Self> {
        let b = Self { values };
        let err = b.gram().max_abs_diff(&MatrixF64::identity(b.k()));
        if err > 1e-10 {
            return Err(Error::InvalidInput(format!("basis columns are not orthonormal (error {err:.2e})")));
        }
        Ok(b)
    }

    pub fn values(&self) -> &MatrixF64 {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.cols()
    }

    pub fn n_voxels(&self) -> usize {
        self.values.rows()
    }

    pub fn gram(&self) -> MatrixF64 {
        let m = self.values.to_dmatrix();
        MatrixF64::from_dmatrix(&m.tr_mul(&m))
    }
}

/// Thin-QR orthonormal basis for the span of the rows of `maps_subset`
/// (`K_sel × V`).
pub fn orthonormalize(maps_subset: &MatrixF64) -> Result<Basis> {
    let (k, v) = maps_subset.shape();
    if k == 0 || k > v {
        return Err(Error::RankDeficient(format!("{k} maps in {v} voxels")));
    }
    let m = maps_subset.to_dmatrix().transpose();
    let qr = m.qr();
    let r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    for i in 0..k {
        if !(r[(i, i)].abs() > 1e-10 * scale) {
            return Err(Error::RankDeficient(format!(
                "map {i} of the subset is linearly dependent on the others"
            )));
        }
    }
    Ok(Basis {
        values: MatrixF64::from_dmatrix(&qr.q()),
    })
}

fn check_pair(a: &Basis, b: &Basis) -> Result<()> {
    if a.k() != b.k() || a.n_voxels() != b.n_voxels() {
        return Err(Error::Shape(format!(
            "bases {}x{} and {}x{} differ",
            a.n_voxels(),
            a.k(),
            b.n_voxels(),
            b.k()
        )));
    }
    Ok(())
}

/// Sum of principal-angle cosines, clamped to `[0, K_sel]`.
pub fn pabs_similarity(a: &Basis, b: &Basis) -> Result<f64> {
    check_pair(a, b)?;
    let prod = a.values.to_dmatrix().tr_mul(&b.values.to_dmatrix());
    Ok(prod.singular_values().sum().clamp(0.0, a.k() as f64))
}

pub fn pabs_kernel(a: &Basis, b: &Basis, p: &PabsKernelParams) -> Result<f64> {
    Ok((p.gamma * pabs_similarity(a, b)?).tanh())
}

/// `tanh(γ_f cos(a, b))`.
pub fn fnc_kernel(a: &FncVector, b: &FncVector, p: &PabsKernelParams) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(Error::Shape(format!(
            "FNC vectors of length {} and {}",
            a.values.len(),
            b.values.len()
        )));
    }
    let na = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVariance("FNC vector has zero norm".into()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((p.fnc_gamma * (dot / (na * nb)).clamp(-1.0, 1.0)).tanh())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: MatrixF64,
    pub subject_ids: Vec<String>,
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    /// Write `<stem>.msmx` and the `<stem>.ids.json` sidecar.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        write_matrix(&self.values, dir.join(format!("{stem}.msmx")))?;
        let p = dir.join(format!("{stem}.ids.json"));
        fs::write(&p, serde_json::to_string_pretty(&self.subject_ids)? + "\n")
            .map_err(|e| Error::io(format!("writing {}", p.display()), e))
    }
}

pub fn apply_spectrum_fix(m: &MatrixF64, fix: SpectrumFix) -> MatrixF64 {
    match fix {
        SpectrumFix::None => m.clone(),
        SpectrumFix::Ridge(l) => {
            let mut out = m.clone();
            for i in 0..out.rows() {
                let d = out.get(i, i);
                out.set(i, i, d + l);
            }
            out
        }
        SpectrumFix::Clip => {
            let eig = SymmetricEigen::new(m.to_dmatrix());
            if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
                return m.clone();
            }
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
            let r = &eig.eigenvectors * d * eig.eigenvectors.transpose();
            let n = m.rows();
            // Exact symmetry after reconstruction.
            MatrixF64::from_fn(n, n, |i, j| 0.5 * (r[(i, j)] + r[(j, i)]))
        }
    }
}

fn validate_inputs(features: &[SubjectFeatures], selected: &[usize], use_fnc: bool) -> Result<(usize, usize)> {
    let first = features
        .first()
        .ok_or_else(|| Error::InvalidInput("no subjects".into()))?;
    let (k, v) = first.spatial_maps.shape();
    if selected.is_empty() {
        return Err(Error::InvalidInput("empty component selection".into()));
    }
    for (a, &s) in selected.iter().enumerate() {
        if s >= k {
            return Err(Error::InvalidInput(format!("component index {s} out of range 0..{k}")));
        }
        if selected[..a].contains(&s) {
            return Err(Error::InvalidInput(format!("component index {s} selected twice")));
        }
    }
    for f in features {
        if f.spatial_maps.shape() != (k, v) {
            return Err(Error::Shape(format!(
                "subject {:?} maps are {:?}, expected {:?}",
                f.subject_id,
                f.spatial_maps.shape(),
                (k, v)
            )));
        }
        if use_fnc && f.fnc.is_none() {
            return Err(Error::InvalidInput(format!("subject {:?} has no FNC", f.subject_id)));
        }
    }
    Ok((k, v))
}

fn combine(sm: f64, fnc: Option<f64>, p: &PabsKernelParams) -> f64 {
    match fnc {
        Some(f) => p.combine_weight * sm + (1.0 - p.combine_weight) * f,
        None => sm,
    }
}

fn fnc_vectors(
    features: &[SubjectFeatures],
    subjects: &[usize],
    selected: &[usize],
    use_fnc: bool,
) -> Option<Vec<FncVector>> {
    // A single component has no pairs; the FNC part is then dropped.
    if !use_fnc || selected.len() < 2 {
        return None;
    }
    Some(
        subjects
            .iter()
            .map(|&s| fisher_z_subset(features[s].fnc.as_ref().unwrap(), selected))
            .collect(),
    )
}

fn fill_symmetric(n: usize, entry: impl Fn(usize, usize) -> Result<f64> + Sync) -> Result<MatrixF64> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| entry(i, j)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let mut m = MatrixF64::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, &x) in row.iter().enumerate() {
            m.set(i, i + off, x);
            m.set(i + off, i, x);
        }
    }
    Ok(m)
}

/// Pairwise kernel over all subjects via explicit bases, before any spectrum
/// fix.
pub fn raw_kernel_matrix(
    features: &[SubjectFeatures],
    selected: &[usize],
    p: &PabsKernelParams,
    use_fnc: bool,
) -> Result<MatrixF64> {
    let all: Vec<usize> = (0..features.len()).collect();
    raw_kernel_subset(features, &all, selected, p, use_fnc)
}

/// [`raw_kernel_matrix`] restricted to `subjects` (indices into `features`).
pub fn raw_kernel_subset(
    features: &[SubjectFeatures],
    subjects: &[usize],
    selected: &[usize],
    p: &PabsKernelParams,
    use_fnc: bool,
) -> Result<MatrixF64> {
    p.validate()?;
    validate_inputs(features, selected, use_fnc)?;
    if let Some(&bad) = subjects.iter().find(|&&s| s >= features.len()) {
        return Err(Error::InvalidInput(format!("subject index {bad} out of range")));
    }
    let bases: Vec<Basis> = subjects
        .par_iter()
        .map(|&s| {
            let f = &features[s];
            orthonormalize(&f.spatial_maps.select_rows(selected)).map_err(|e| match e {
                Error::RankDeficient(m) => Error::RankDeficient(format!(
                    "subject {:?}, components {selected:?}: {m}",
                    f.subject_id
                )),
                e => e,
            })
        })
        .collect::<Result<_>>()?;
    let fz = fnc_vectors(features, subjects, selected, use_fnc);
    fill_symmetric(subjects.len(), |i, j| {
        let sm = pabs_kernel(&bases[i], &bases[j], p)?;
        let f = match &fz {
            Some(z) => Some(fnc_kernel(&z[i], &z[j], p)?),
            None => None,
        };
        Ok(combine(sm, f, p))
    })
}

/// Full `N × N` kernel with `p.spectrum_fix` applied.
pub fn build_kernel_matrix(
    features: &[SubjectFeatures],
    selected: &[usize],
    p: &PabsKernelParams,
    use_fnc: bool,
) -> Result<KernelMatrix> {
    let raw = raw_kernel_matrix(features, selected, p, use_fnc)?;
    Ok(KernelMatrix {
        values: apply_spectrum_fix(&raw, p.spectrum_fix),
        subject_ids: features.iter().map(|f| f.subject_id.clone()).collect(),
    })
}

/// Cross-Gram cache `G[(a,i),(b,j)] = ⟨map_a,i , map_b,j⟩` over all subjects
/// and components, for fast kernels on arbitrary component subsets.
pub struct GramCache {
    gram: DMatrix<f64>,
    k: usize,
    n: usize,
    fnc: Vec<Option<MatrixF64>>,
}

impl GramCache {
    /// Default budget for the cached Gram matrix, in entries.
    pub const MAX_ENTRIES: usize = 16_000_000;

    /// `None` when `(N·K)²` exceeds [`Self::MAX_ENTRIES`].
    pub fn try_new(features: &[SubjectFeatures]) -> Result<Option<Self>> {
        let first = features
            .first()
            .ok_or_else(|| Error::InvalidInput("no subjects".into()))?;
        let (k, v) = first.spatial_maps.shape();
        let n = features.len();
        if (n * k).saturating_mul(n * k) > Self::MAX_ENTRIES {
            return Ok(None);
        }
        let mut stacked = DMatrix::<f64>::zeros(n * k, v);
        for (a, f) in features.iter().enumerate() {
            if f.spatial_maps.shape() != (k, v) {
                return Err(Error::Shape(format!("subject {:?} maps have a different shape", f.subject_id)));
            }
            for i in 0..k {
                for (c, &x) in f.spatial_maps.row(i).iter().enumerate() {
                    stacked[(a * k + i, c)] = x;
                }
            }
        }
        let gram = &stacked * stacked.transpose();
        Ok(Some(Self {
            gram,
            k,
            n,
            fnc: features.iter().map(|f| f.fnc.clone()).collect(),
        }))
    }

    pub fn n_subjects(&self) -> usize {
        self.n
    }

    fn block(&self, a: usize, b: usize, sel: &[usize]) -> DMatrix<f64> {
        let s = sel.len();
        DMatrix::from_fn(s, s, |i, j| self.gram[(a * self.k + sel[i], b * self.k + sel[j])])
    }

    /// Kernel among `subjects` (indices into the cached cohort), before any
    /// spectrum fix.
    pub fn raw_kernel(
        &self,
        subjects: &[usize],
        selected: &[usize],
        p: &PabsKernelParams,
        use_fnc: bool,
    ) -> Result<MatrixF64> {
        p.validate()?;
        for (a, &s) in selected.iter().enumerate() {
            if s >= self.k || selected[..a].contains(&s) {
                return Err(Error::InvalidInput(format!("bad component selection {selected:?}")));
            }
        }
        if selected.is_empty() {
            return Err(Error::InvalidInput("empty component selection".into()));
        }
        if use_fnc && subjects.iter().any(|&s| self.fnc[s].is_none()) {
            return Err(Error::InvalidInput("FNC missing for a subject".into()));
        }
        // L⁻¹ for each subject, where L Lᵀ is its selected Gram block.
        let inv_l: Vec<DMatrix<f64>> = subjects
            .iter()
            .map(|&a| {
                let g = self.block(a, a, selected);
                let scale = g.diagonal().max();
                let ch = g.cholesky().ok_or_else(|| {
                    Error::RankDeficient(format!("subject {a}, components {selected:?}"))
                })?;
                let l = ch.l();
                let lmin = l.diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
                if !(lmin > 1e-7 * scale.sqrt()) {
                    return Err(Error::RankDeficient(format!("subject {a}, components {selected:?}")));
                }
                let ident = DMatrix::identity(selected.len(), selected.len());
                Ok(l.solve_lower_triangular(&ident).expect("nonsingular triangle"))
            })
            .collect::<Result<_>>()?;
        let fz: Option<Vec<FncVector>> = if use_fnc && selected.len() >= 2 {
            Some(
                subjects
                    .iter()
                    .map(|&s| fisher_z_subset(self.fnc[s].as_ref().unwrap(), selected))
                    .collect(),
            )
        } else {
            None
        };
        let kdim = selected.len() as f64;
        fill_symmetric(subjects.len(), |i, j| {
            let cross = self.block(subjects[i], subjects[j], selected);
            let m = &inv_l[i] * cross * inv_l[j].transpose();
            let s = m.singular_values().sum().clamp(0.0, kdim);
            let sm = (p.gamma * s).tanh();
            let f = match &fz {
                Some(z) => Some(fnc_kernel(&z[i], &z[j], p)?),
                None => None,
            };
            Ok(combine(sm, f, p))
        })
    }
}

/// Raw kernel blocks over arbitrary subject subsets, through the Gram cache
/// when it fits and explicit bases otherwise.
pub struct KernelSource<'a> {
    features: &'a [SubjectFeatures],
    cache: Option<GramCache>,
}

impl<'a> KernelSource<'a> {
    pub fn new(features: &'a [SubjectFeatures], use_cache: bool) -> Result<Self> {
        let cache = if use_cache { GramCache::try_new(features)? } else { None };
        Ok(Self { features, cache })
    }

    pub fn features(&self) -> &'a [SubjectFeatures] {
        self.features
    }

    pub fn n_subjects(&self) -> usize {
        self.features.len()
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    pub fn raw(&self, subjects: &[usize], selected: &[usize], p: &PabsKernelParams, use_fnc: bool) -> Result<MatrixF64> {
        match &self.cache {
            Some(c) => {
                validate_inputs(self.features, selected, use_fnc)?;
                c.raw_kernel(subjects, selected, p, use_fnc)
            }
            None => raw_kernel_subset(self.features, subjects, selected, p, use_fnc),
        }
    }
}

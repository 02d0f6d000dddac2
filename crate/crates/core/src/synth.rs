//! Synthetic cohorts with planted ground truth: Gaussian-blob components on a
//! voxel grid, class-dependent spatial satellites and time-course
//! correlations on informative components, and noisy bold = TC · SM + ε.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, Subject, Template};
use crate::error::{Error, Result};
use crate::matrix::{mean, std_pop, write_matrix, zscore_in_place, MatrixF64};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// `(nx, ny, nz)`; `V = nx · ny · nz`.
    pub grid: [usize; 3],
    pub n_components: usize,
    /// Number of domains when `domain_sizes` is unset.
    pub n_domains: usize,
    /// Named domains with fixed sizes summing to `n_components`.
    pub domain_sizes: Option<Vec<(String, usize)>>,
    pub timepoints: usize,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    /// Multiplies `class_counts` (rounded, floored at `min_class_count`).
    pub class_scale: f64,
    pub min_class_count: usize,
    pub informative_components: usize,
    /// Amplitude of the class satellite blob relative to the main blob.
    pub spatial_effect: f64,
    /// Time-course correlation on informative pairs is `0.6 · fnc_effect`.
    pub fnc_effect: f64,
    pub noise_sigma: f64,
    /// Range of blob standard deviations in voxels.
    pub blob_sigma: (f64, f64),
    /// Per-subject jitter of blob centres, in voxels.
    pub center_jitter: f64,
    /// Per-voxel noise added to each z-scored subject map.
    pub map_noise: f64,
    pub max_overlap: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            grid: [16, 16, 8],
            n_components: 20,
            n_domains: 6,
            domain_sizes: None,
            timepoints: 164,
            class_names: vec!["AD".into(), "MS".into(), "NR".into()],
            class_counts: vec![47, 45, 8],
            class_scale: 1.0,
            min_class_count: 1,
            informative_components: 4,
            spatial_effect: 1.0,
            fnc_effect: 0.5,
            noise_sigma: 1.9,
            blob_sigma: (1.2, 2.0),
            center_jitter: 0.3,
            map_noise: 0.1,
            max_overlap: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    N53,
    N105,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "n53" => Some(Self::N53),
            "n105" => Some(Self::N105),
            _ => None,
        }
    }

    /// Overrides grid, component count and domain layout of `cfg`.
    pub fn apply(self, cfg: &mut SynthConfig) {
        let sizes: &[(&str, usize)] = match self {
            Self::N53 => &[("SC", 5), ("AUD", 2), ("SM", 9), ("VI", 9), ("CO", 17), ("DM", 7), ("CB", 4)],
            Self::N105 => &[("VI", 12), ("CB", 13), ("TP", 13), ("SC", 23), ("SM", 13), ("HC", 31)],
        };
        let (grid, sigma) = match self {
            Self::N53 => ([20, 20, 10], (1.0, 1.6)),
            Self::N105 => ([24, 24, 12], (0.9, 1.5)),
        };
        cfg.grid = grid;
        cfg.blob_sigma = sigma;
        cfg.domain_sizes = Some(sizes.iter().map(|(n, k)| (n.to_string(), *k)).collect());
        cfg.n_components = sizes.iter().map(|s| s.1).sum();
        cfg.n_domains = sizes.len();
    }
}

impl SynthConfig {
    pub fn n_voxels(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn scaled_counts(&self) -> Vec<usize> {
        self.class_counts
            .iter()
            .map(|&c| ((c as f64 * self.class_scale).round() as usize).max(self.min_class_count))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.grid.contains(&0) {
            return bad("grid dimensions must be >= 1");
        }
        if self.n_components == 0 || self.n_voxels() < self.n_components {
            return bad("need 1 <= n_components <= V");
        }
        if self.timepoints <= self.n_components {
            return bad("timepoints must exceed n_components");
        }
        match &self.domain_sizes {
            Some(d) => {
                if d.iter().map(|x| x.1).sum::<usize>() != self.n_components || d.iter().any(|x| x.1 == 0) {
                    return bad("domain_sizes must be positive and sum to n_components");
                }
            }
            None => {
                if self.n_domains == 0 || self.n_domains > self.n_components {
                    return bad("need 1 <= n_domains <= n_components");
                }
            }
        }
        if self.class_names.len() != self.class_counts.len() || self.class_names.len() < 2 {
            return bad("class_names and class_counts must match, with at least 2 classes");
        }
        if self.scaled_counts().contains(&0) {
            return bad("every class needs at least one subject");
        }
        if self.informative_components > self.n_components {
            return bad("informative_components exceeds n_components");
        }
        let nonneg = [
            self.spatial_effect,
            self.fnc_effect,
            self.noise_sigma,
            self.center_jitter,
            self.map_noise,
            self.class_scale,
        ];
        if nonneg.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return bad("effects, noise levels and class_scale must be finite and >= 0");
        }
        if !(self.blob_sigma.0 > 0.0 && self.blob_sigma.1 >= self.blob_sigma.0) {
            return bad("blob_sigma must be an increasing positive range");
        }
        if !(self.max_overlap > 0.0 && self.max_overlap <= 1.0) {
            return bad("max_overlap must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 3],
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEffect {
    pub class: String,
    /// Satellite centre per informative component (same order as
    /// `GroundTruth::informative_indices`).
    pub satellites: Vec<[f64; 3]>,
    /// `(i, j, correlation)` planted between informative time courses.
    pub tc_correlations: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub planted_maps: MatrixF64,
    pub blobs: Vec<Blob>,
    pub informative_indices: Vec<usize>,
    pub class_effects: Vec<ClassEffect>,
    /// Per-subject planted maps (`K × V`, rows z-scored) and time courses.
    pub subject_maps: Vec<MatrixF64>,
    pub subject_tcs: Vec<MatrixF64>,
    /// Mean signal power over noise power.
    pub snr: f64,
}

fn coords(grid: [usize; 3]) -> Vec<[f64; 3]> {
    let [nx, ny, nz] = grid;
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.push([x as f64, y as f64, z as f64]);
            }
        }
    }
    out
}

fn blob_row(xyz: &[[f64; 3]], center: [f64; 3], sigma: f64, amp: f64, out: &mut [f64]) {
    let s2 = 2.0 * sigma * sigma;
    for (o, p) in out.iter_mut().zip(xyz) {
        let d2: f64 = (0..3).map(|a| (p[a] - center[a]).powi(2)).sum();
        *o += amp * (-d2 / s2).exp();
    }
}

fn corr_z(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Template of `K` z-scored blob maps with pairwise `|corr| < max_overlap`,
/// grouped into domains by blob location.
pub fn generate_template(cfg: &SynthConfig, seed: u64) -> Result<(Template, Vec<Blob>)> {
    cfg.validate()?;
    let xyz = coords(cfg.grid);
    let v = xyz.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7e]));
    let mut blobs: Vec<Blob> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    const RETRIES: usize = 10_000;
    for comp in 0..cfg.n_components {
        let mut placed = false;
        for _ in 0..RETRIES {
            let center = [
                rng.gen_range(0.0..cfg.grid[0] as f64 - 1.0 + f64::EPSILON),
                rng.gen_range(0.0..cfg.grid[1] as f64 - 1.0 + f64::EPSILON),
                rng.gen_range(0.0..cfg.grid[2] as f64 - 1.0 + f64::EPSILON),
            ];
            let sigma = if cfg.blob_sigma.1 > cfg.blob_sigma.0 {
                rng.gen_range(cfg.blob_sigma.0..cfg.blob_sigma.1)
            } else {
                cfg.blob_sigma.0
            };
            let mut row = vec![0.0; v];
            blob_row(&xyz, center, sigma, 1.0, &mut row);
            if !zscore_in_place(&mut row) {
                continue;
            }
            if rows.iter().all(|r| corr_z(r, &row).abs() < cfg.max_overlap) {
                rows.push(row);
                blobs.push(Blob { center, sigma });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "could not place component {comp} with overlap below {} after {RETRIES} tries; enlarge the grid or shrink blob_sigma",
                cfg.max_overlap
            )));
        }
    }

    // Domain by location: rank blobs along the grid's long axis and deal them
    // round-robin, skipping domains that are already full.
    let sizes: Vec<(String, usize)> = match &cfg.domain_sizes {
        Some(d) => d.clone(),
        None => (0..cfg.n_domains)
            .map(|d| {
                let base = cfg.n_components / cfg.n_domains;
                (format!("D{}", d + 1), base + usize::from(d < cfg.n_components % cfg.n_domains))
            })
            .collect(),
    };
    let mut order: Vec<usize> = (0..cfg.n_components).collect();
    order.sort_by(|&a, &b| {
        let ka = (blobs[a].center[0], blobs[a].center[1], blobs[a].center[2]);
        let kb = (blobs[b].center[0], blobs[b].center[1], blobs[b].center[2]);
        ka.partial_cmp(&kb).unwrap()
    });
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); sizes.len()];
    let mut d = 0;
    for &c in &order {
        while members[d].len() >= sizes[d].1 {
            d = (d + 1) % sizes.len();
        }
        members[d].push(c);
        d = (d + 1) % sizes.len();
    }
    let mut maps = Vec::with_capacity(cfg.n_components);
    let mut domains = Vec::new();
    let mut ids = Vec::new();
    let mut out_blobs = Vec::new();
    for (di, m) in members.iter().enumerate() {
        for (j, &c) in m.iter().enumerate() {
            maps.push(rows[c].clone());
            domains.push(sizes[di].0.clone());
            ids.push(format!("{}{:02}", sizes[di].0, j + 1));
            out_blobs.push(blobs[c].clone());
        }
    }
    let template = Template::new(MatrixF64::from_rows(&maps)?, ids, domains, None)?;
    Ok((template, out_blobs))
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Class-specific correlation matrix, shrunk towards identity until it is
/// positive definite; returns its Cholesky factor and the planted pairs.
fn class_tc_factor(
    k: usize,
    informative: &[usize],
    magnitude: f64,
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, Vec<(usize, usize, f64)>) {
    let mut pairs = Vec::new();
    for (a, &i) in informative.iter().enumerate() {
        for &j in &informative[a + 1..] {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            pairs.push((i, j, sign * magnitude));
        }
    }
    let mut shrink = 1.0;
    loop {
        let mut c = DMatrix::<f64>::identity(k, k);
        for &(i, j, r) in &pairs {
            c[(i, j)] = r * shrink;
            c[(j, i)] = r * shrink;
        }
        if let Some(ch) = c.cholesky() {
            let planted = pairs.iter().map(|&(i, j, r)| (i, j, r * shrink)).collect();
            return (ch.l(), planted);
        }
        shrink *= 0.9;
    }
}

/// Informative components: one per domain in domain order, cycling when
/// more are requested than there are domains.
fn pick_informative(template: &Template, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut groups: Vec<Vec<usize>> = template.domain_groups().into_iter().map(|(_, g)| g).collect();
    let mut picked = Vec::new();
    let n_groups = groups.len();
    let mut d = 0;
    while picked.len() < n {
        let g = &mut groups[d % n_groups];
        if !g.is_empty() {
            let i = rng.gen_range(0..g.len());
            picked.push(g.remove(i));
        }
        d += 1;
    }
    picked.sort_unstable();
    picked
}

pub fn generate_cohort(cfg: &SynthConfig, seed: u64) -> Result<(Dataset, GroundTruth)> {
    let (template, blobs) = generate_template(cfg, seed)?;
    let k = cfg.n_components;
    let t = cfg.timepoints;
    let xyz = coords(cfg.grid);
    let v = xyz.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xc1a55]));
    let informative = pick_informative(&template, cfg.informative_components, &mut rng);

    let mut effects = Vec::new();
    let mut factors = Vec::new();
    for name in &cfg.class_names {
        let satellites = informative
            .iter()
            .map(|&i| {
                let b = &blobs[i];
                let dir = random_unit(&mut rng);
                let dist = b.sigma * rng.gen_range(1.5..2.5);
                [0, 1, 2].map(|a| b.center[a] + dir[a] * dist)
            })
            .collect();
        let (l, pairs) = class_tc_factor(k, &informative, 0.6 * cfg.fnc_effect, &mut rng);
        factors.push(l);
        effects.push(ClassEffect {
            class: name.clone(),
            satellites,
            tc_correlations: pairs,
        });
    }

    let counts = cfg.scaled_counts();
    let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
    type Generated = (Subject, MatrixF64, MatrixF64, f64);
    let generated: Vec<Generated> = labels
        .par_iter()
        .enumerate()
        .map(|(s, &class)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5b, s as u64]));
            let mut sm = MatrixF64::zeros(k, v);
            for comp in 0..k {
                let b = &blobs[comp];
                let center = b.center.map(|c| c + cfg.center_jitter * rng.sample::<f64, _>(StandardNormal));
                let row = sm.row_mut(comp);
                blob_row(&xyz, center, b.sigma, 1.0, row);
                if let Some(pos) = informative.iter().position(|&i| i == comp) {
                    blob_row(&xyz, effects[class].satellites[pos], b.sigma, cfg.spatial_effect, row);
                }
                zscore_in_place(row);
                for x in row.iter_mut() {
                    *x += cfg.map_noise * rng.sample::<f64, _>(StandardNormal);
                }
                zscore_in_place(row);
            }
            let white = DMatrix::<f64>::from_fn(k, t, |_, _| rng.sample(StandardNormal));
            let tc_kt = &factors[class] * white;
            let tc = MatrixF64::from_fn(t, k, |i, j| tc_kt[(j, i)]);
            let signal = tc.matmul(&sm).expect("conformable");
            let power = signal.values().iter().map(|x| x * x).sum::<f64>() / signal.values().len() as f64;
            let mut bold = signal;
            for x in bold.values_mut() {
                *x += cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
            let name = &cfg.class_names[class];
            let subject = Subject {
                id: format!("sub-{:03}", s + 1),
                bold,
                label: name.clone(),
                group: name.clone(),
            };
            (subject, sm, tc, power)
        })
        .collect();

    let mean_power = generated.iter().map(|g| g.3).sum::<f64>() / generated.len() as f64;
    let snr = if cfg.noise_sigma > 0.0 {
        mean_power / (cfg.noise_sigma * cfg.noise_sigma)
    } else {
        f64::INFINITY
    };
    let mut subjects = Vec::with_capacity(generated.len());
    let mut subject_maps = Vec::with_capacity(generated.len());
    let mut subject_tcs = Vec::with_capacity(generated.len());
    for (s, m, tc, _) in generated {
        subjects.push(s);
        subject_maps.push(m);
        subject_tcs.push(tc);
    }
    let truth = GroundTruth {
        planted_maps: template.maps.clone(),
        blobs,
        informative_indices: informative,
        class_effects: effects,
        subject_maps,
        subject_tcs,
        snr,
    };
    let dataset = Dataset::new(template, subjects, cfg.class_names.clone())?;
    Ok((dataset, truth))
}

#[derive(Serialize)]
struct TruthSummary<'a> {
    informative_indices: &'a [usize],
    class_effects: &'a [ClassEffect],
    blobs: &'a [Blob],
    snr: f64,
    subjects: Vec<String>,
}

/// Writes `truth.json` plus `planted.msmx` and per-subject `<id>.sm.msmx` /
/// `<id>.tc.msmx` into `dir`.
pub fn save_truth(truth: &GroundTruth, dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let summary = TruthSummary {
        informative_indices: &truth.informative_indices,
        class_effects: &truth.class_effects,
        blobs: &truth.blobs,
        snr: truth.snr,
        subjects: dataset.subjects.iter().map(|s| s.id.clone()).collect(),
    };
    let p = dir.join("truth.json");
    fs::write(&p, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
    write_matrix(&truth.planted_maps, dir.join("planted.msmx"))?;
    for (s, subj) in dataset.subjects.iter().enumerate() {
        write_matrix(&truth.subject_maps[s], dir.join(format!("{}.sm.msmx", subj.id)))?;
        write_matrix(&truth.subject_tcs[s], dir.join(format!("{}.tc.msmx", subj.id)))?;
    }
    Ok(())
}

/// Mean absolute Pearson correlation between matching rows.
pub fn mean_abs_row_corr(a: &MatrixF64, b: &MatrixF64) -> f64 {
    let mut total = 0.0;
    for i in 0..a.rows() {
        let (x, y) = (a.row(i), b.row(i));
        let (mx, my) = (mean(x), mean(y));
        let (sx, sy) = (std_pop(x, mx), std_pop(y, my));
        let c = x.iter().zip(y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / (x.len() as f64 * sx * sy);
        total += c.abs();
    }
    total / a.rows() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteractionConfig {
    pub n_per_class: usize,
    pub n_voxels: usize,
    /// Class signal on A1, for every subject.
    pub marginal_effect: f64,
    /// Weight of the shared direction in A2 and B2, relative to their bases.
    pub paired_effect: f64,
    pub map_noise: f64,
    pub seed: u64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            n_per_class: 20,
            n_voxels: 500,
            marginal_effect: 0.05,
            paired_effect: 2.0,
            map_noise: 0.5,
            seed: 0,
        }
    }
}

/// Features, labels and domains of the interaction cohort.
pub type InteractionCohort = (Vec<crate::datamodel::SubjectFeatures>, Vec<usize>, Vec<(String, Vec<usize>)>);

/// Two-class cohort over two domains `A = {A1, A2}` (components 0, 1) and
/// `B = {B1, B2}` (components 2, 3).
///
/// A1 carries a weak class pattern. With a subject sign `t = ±1` and a class
/// sign `c = ±1`, `A2 = b_A + t·a·w` and `B2 = b_B + c·t·a·w`: either map
/// alone has the same distribution in both classes, while the span of the
/// pair depends on `c`. B1 is noise. Returns features, labels and domains.
pub fn generate_interaction_cohort(
    cfg: &InteractionConfig,
) -> Result<InteractionCohort> {
    if cfg.n_per_class < 2 || cfg.n_voxels < 8 {
        return Err(Error::Config("interaction cohort needs n_per_class >= 2 and n_voxels >= 8".into()));
    }
    let v = cfg.n_voxels;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x1a]));
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..v).map(|_| rng.sample(StandardNormal)).collect() };
    let base: Vec<Vec<f64>> = (0..4).map(|_| gauss(&mut rng)).collect();
    let shared = gauss(&mut rng);
    let patterns: Vec<Vec<f64>> = (0..2).map(|_| gauss(&mut rng)).collect();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for class in 0..2 {
        let c = if class == 0 { 1.0 } else { -1.0 };
        for s in 0..cfg.n_per_class {
            let t = if s % 2 == 0 { 1.0 } else { -1.0 };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x2b, class as u64, s as u64]));
            let maps = MatrixF64::from_fn(4, v, |k, x| {
                let signal = match k {
                    0 => cfg.marginal_effect * patterns[class][x],
                    1 => t * cfg.paired_effect * shared[x],
                    3 => c * t * cfg.paired_effect * shared[x],
                    _ => 0.0,
                };
                base[k][x] + signal + cfg.map_noise * rng.sample::<f64, _>(StandardNormal)
            });
            feats.push(crate::datamodel::SubjectFeatures {
                subject_id: format!("c{class}-{s:02}"),
                spatial_maps: maps,
                time_courses: MatrixF64::zeros(2, 4),
                fnc: None,
            });
            labels.push(class);
        }
    }
    let domains = vec![("A".to_string(), vec![0, 1]), ("B".to_string(), vec![2, 3])];
    Ok((feats, labels, domains))
}

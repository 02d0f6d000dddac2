//! Domain types shared across the pipeline and the JSON dataset manifest.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::matrix::{mean, read_matrix, std_pop, write_matrix, MatrixF64};

/// Reference spatial maps (components × voxels) with one functional-domain
/// tag per component.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub maps: MatrixF64,
    pub component_ids: Vec<String>,
    pub domains: Vec<String>,
    pub scale_order: Option<Vec<u32>>,
}

impl Template {
    pub fn new(
        maps: MatrixF64,
        component_ids: Vec<String>,
        domains: Vec<String>,
        scale_order: Option<Vec<u32>>,
    ) -> Result<Self> {
        let k = maps.rows();
        if k == 0 || maps.cols() == 0 {
            return Err(Error::Shape("template needs at least one component and one voxel".into()));
        }
        if component_ids.len() != k {
            return Err(Error::Shape(format!(
                "{} component ids for {k} components",
                component_ids.len()
            )));
        }
        if domains.len() != k {
            return Err(Error::Shape(format!("{} domain tags for {k} components", domains.len())));
        }
        if let Some(s) = &scale_order {
            if s.len() != k {
                return Err(Error::Shape(format!("{} scale-order tags for {k} components", s.len())));
            }
        }
        maps.ensure_finite()?;
        for i in 0..k {
            let row = maps.row(i);
            if std_pop(row, mean(row)) <= 0.0 {
                return Err(Error::ZeroVariance(format!("template component {i} ({})", component_ids[i])));
            }
        }
        Ok(Self {
            maps,
            component_ids,
            domains,
            scale_order,
        })
    }

    /// Template with generated ids `c000, c001, ...`.
    pub fn with_domains(maps: MatrixF64, domains: Vec<String>) -> Result<Self> {
        let ids = (0..maps.rows()).map(|i| format!("c{i:03}")).collect();
        Self::new(maps, ids, domains, None)
    }

    pub fn n_components(&self) -> usize {
        self.maps.rows()
    }

    pub fn n_voxels(&self) -> usize {
        self.maps.cols()
    }

    /// Distinct domain tags in order of first declaration.
    pub fn domain_order(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.domains
            .iter()
            .filter(|d| seen.insert(d.as_str()))
            .cloned()
            .collect()
    }

    pub fn components_in(&self, domain: &str) -> Vec<usize> {
        (0..self.domains.len())
            .filter(|&i| self.domains[i] == domain)
            .collect()
    }

    /// Component indices grouped by domain, in domain declaration order.
    pub fn domain_groups(&self) -> Vec<(String, Vec<usize>)> {
        self.domain_order()
            .into_iter()
            .map(|d| {
                let idx = self.components_in(&d);
                (d, idx)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// Timepoints × voxels.
    pub bold: MatrixF64,
    pub label: String,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub template: Template,
    pub subjects: Vec<Subject>,
    pub class_set: Vec<String>,
}

impl Dataset {
    /// Validates labels, voxel counts, id uniqueness and the class set.
    ///
    /// Per-class minimum sizes are a property of an experiment (they depend
    /// on the fold count) and are checked by [`Dataset::check_class_sizes`].
    pub fn new(template: Template, subjects: Vec<Subject>, class_set: Vec<String>) -> Result<Self> {
        let mut classes = HashSet::new();
        for c in &class_set {
            if !classes.insert(c.as_str()) {
                return Err(Error::Manifest(format!("class {c:?} listed twice in class_set")));
            }
        }
        if class_set.len() < 2 {
            return Err(Error::Manifest("class_set needs at least two classes".into()));
        }
        let mut ids = HashSet::new();
        for s in &subjects {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            if !classes.contains(s.label.as_str()) {
                return Err(Error::UnknownLabel {
                    subject: s.id.clone(),
                    label: s.label.clone(),
                });
            }
            if s.bold.cols() != template.n_voxels() {
                return Err(Error::VoxelMismatch {
                    subject: s.id.clone(),
                    expected: template.n_voxels(),
                    found: s.bold.cols(),
                });
            }
            if s.bold.rows() < 2 {
                return Err(Error::Shape(format!(
                    "subject {:?} has {} timepoints, need at least 2",
                    s.id,
                    s.bold.rows()
                )));
            }
            s.bold.ensure_finite().context(|| format!("subject {:?}", s.id))?;
        }
        Ok(Self {
            template,
            subjects,
            class_set,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Label of each subject as an index into `class_set`.
    pub fn label_indices(&self) -> Vec<usize> {
        self.subjects
            .iter()
            .map(|s| self.class_set.iter().position(|c| *c == s.label).unwrap())
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_set.len()];
        for l in self.label_indices() {
            counts[l] += 1;
        }
        counts
    }

    /// Every class must have at least `min` members.
    pub fn check_class_sizes(&self, min: usize) -> Result<()> {
        for (c, n) in self.class_set.iter().zip(self.class_counts()) {
            if n < min {
                return Err(Error::ClassTooSmall {
                    class: c.clone(),
                    size: n,
                    k: min,
                });
            }
        }
        Ok(())
    }

    /// Restrict to subjects whose label is in `classes`, re-indexing the class
    /// set to `classes` order.
    pub fn restrict_classes(&self, classes: &[String]) -> Result<Self> {
        for c in classes {
            if !self.class_set.contains(c) {
                return Err(Error::MissingClass(c.clone()));
            }
        }
        let subjects = self
            .subjects
            .iter()
            .filter(|s| classes.contains(&s.label))
            .cloned()
            .collect();
        Self::new(self.template.clone(), subjects, classes.to_vec())
    }
}

/// Per-subject output of constrained ICA.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectFeatures {
    pub subject_id: String,
    /// Components × voxels, each row z-scored over voxels.
    pub spatial_maps: MatrixF64,
    /// Timepoints × components.
    pub time_courses: MatrixF64,
    /// Components × components Pearson FNC, once computed.
    pub fnc: Option<MatrixF64>,
}

impl SubjectFeatures {
    pub fn n_components(&self) -> usize {
        self.spatial_maps.rows()
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.spatial_maps.rows() != k {
            return Err(Error::Shape(format!(
                "subject {:?}: {} spatial maps, template has {k}",
                self.subject_id,
                self.spatial_maps.rows()
            )));
        }
        if self.time_courses.cols() != k {
            return Err(Error::Shape(format!(
                "subject {:?}: {} time courses, template has {k}",
                self.subject_id,
                self.time_courses.cols()
            )));
        }
        if let Some(f) = &self.fnc {
            if f.shape() != (k, k) {
                return Err(Error::Shape(format!("subject {:?}: FNC is not {k}x{k}", self.subject_id)));
            }
            if f.max_asymmetry() > 1e-12 || (0..k).any(|i| f.get(i, i) != 1.0) {
                return Err(Error::InvalidInput(format!(
                    "subject {:?}: FNC must be symmetric with unit diagonal",
                    self.subject_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSubject {
    pub id: String,
    pub bold: String,
    pub label: String,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub template: String,
    pub domains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_order: Option<Vec<u32>>,
    pub class_set: Vec<String>,
    pub subjects: Vec<ManifestSubject>,
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

pub fn load_template(path: &Path, manifest: &Manifest) -> Result<Template> {
    let maps = read_matrix(path).context(|| format!("template {}", path.display()))?;
    let ids = manifest
        .component_ids
        .clone()
        .unwrap_or_else(|| (0..maps.rows()).map(|i| format!("c{i:03}")).collect());
    Template::new(maps, ids, manifest.domains.clone(), manifest.scale_order.clone())
}

/// Load and fully validate a dataset described by a JSON manifest. Relative
/// paths resolve against the manifest's directory.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let template = load_template(&resolve(base, &manifest.template), &manifest)?;
    let mut seen = HashSet::new();
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for s in &manifest.subjects {
        // Cheap checks first so a bad manifest fails before reading payloads.
        if !seen.insert(s.id.clone()) {
            return Err(Error::DuplicateId(s.id.clone()));
        }
        if !manifest.class_set.contains(&s.label) {
            return Err(Error::UnknownLabel {
                subject: s.id.clone(),
                label: s.label.clone(),
            });
        }
        let bold = read_matrix(resolve(base, &s.bold)).context(|| format!("subject {:?}", s.id))?;
        subjects.push(Subject {
            id: s.id.clone(),
            bold,
            label: s.label.clone(),
            group: s.group.clone(),
        });
    }
    Dataset::new(template, subjects, manifest.class_set)
}

/// Write `dataset` under `dir` as `manifest.json`, `template.msmx` and
/// `bold/<id>.msmx`. Returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let bold_dir = dir.join("bold");
    fs::create_dir_all(&bold_dir).map_err(|e| Error::io(format!("creating {}", bold_dir.display()), e))?;
    write_matrix(&dataset.template.maps, dir.join("template.msmx"))?;
    let mut subjects = Vec::with_capacity(dataset.subjects.len());
    for s in &dataset.subjects {
        let rel = format!("bold/{}.msmx", s.id);
        write_matrix(&s.bold, dir.join(&rel))?;
        subjects.push(ManifestSubject {
            id: s.id.clone(),
            bold: rel,
            label: s.label.clone(),
            group: s.group.clone(),
        });
    }
    let manifest = Manifest {
        template: "template.msmx".into(),
        domains: dataset.template.domains.clone(),
        component_ids: Some(dataset.template.component_ids.clone()),
        scale_order: dataset.template.scale_order.clone(),
        class_set: dataset.class_set.clone(),
        subjects,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

//! On-disk pipeline stages used by the command-line tool. Each stage reads
//! the previous stage's artifacts under the output directory:
//!
//! ```text
//! out/dataset/    manifest.json, template.msmx, bold/, truth/
//! out/features/   <id>.sm.msmx, <id>.tc.msmx, <id>.fnc.msmx, index.json
//! out/kernel/     <features>.msmx, <features>.ids.json
//! out/selection/  trace.csv, selection.json
//! out/eval/       report.csv, summary.csv, report.json, baseline.json, report.svg
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FeatureSet, RunConfig, SelectionMode};
use crate::datamodel::{load_dataset, save_dataset, SubjectFeatures, Template};
use crate::error::{Error, Result, ResultExt};
use crate::eval::report::{render_svg, write_reports, ExperimentReport};
use crate::eval::{permutation_baseline, run_experiment, BaselineStats, EvalConfig, Experiment, FeatureSelection};
use crate::fnc::compute_fnc_with;
use crate::kernels::{apply_spectrum_fix, KernelMatrix, KernelSource};
use crate::matrix::{read_matrix, write_matrix, MatrixF64};
use crate::scica::{extract_features, UnitReport};
use crate::seeds::derive_seed;
use crate::selection::{ssfs, ScoringContext, SelectionResult, SsfsConfig};
use crate::svm::SvmConfig;
use crate::synth::{generate_cohort, save_truth, Preset};

const TAG_SYNTH: u64 = 1;
const TAG_SCICA: u64 = 2;
const TAG_SVM: u64 = 3;
const TAG_SELECT: u64 = 4;
const TAG_EVAL: u64 = 5;
const TAG_PERMUTE: u64 = 6;

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

fn write_text(p: &Path, body: &str) -> Result<()> {
    fs::write(p, body).map_err(|e| Error::io(format!("writing {}", p.display()), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(p: &Path) -> Result<T> {
    if !p.exists() {
        return Err(Error::MissingFile(p.to_path_buf()));
    }
    let text = fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))
}

fn write_json<T: Serialize>(p: &Path, value: &T) -> Result<()> {
    write_text(p, &(serde_json::to_string_pretty(value)? + "\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub n_subjects: usize,
    pub class_set: Vec<String>,
    pub class_counts: Vec<usize>,
    pub n_components: usize,
    pub n_voxels: usize,
    pub timepoints: usize,
    pub domains: Vec<String>,
    pub informative_indices: Vec<usize>,
    pub snr: f64,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<SimulateSummary> {
    let mut synth = cfg.synth.clone();
    match cfg.template.as_str() {
        "synthetic" => {}
        t => match Preset::parse(t) {
            Some(p) => p.apply(&mut synth),
            None => {
                return Err(Error::Config(format!(
                    "simulate builds its own template; use synthetic, n53 or n105 (got {t:?})"
                )))
            }
        },
    }
    let (dataset, truth) = generate_cohort(&synth, derive_seed(cfg.seed, &[TAG_SYNTH, synth.seed]))?;
    let dir = out.join("dataset");
    save_dataset(&dataset, &dir)?;
    save_truth(&truth, &dataset, dir.join("truth"))?;
    let summary = SimulateSummary {
        n_subjects: dataset.n_subjects(),
        class_set: dataset.class_set.clone(),
        class_counts: dataset.class_counts(),
        n_components: dataset.template.n_components(),
        n_voxels: dataset.template.n_voxels(),
        timepoints: synth.timepoints,
        domains: dataset.template.domain_order(),
        informative_indices: truth.informative_indices.clone(),
        snr: truth.snr,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Template description on disk: maps container plus domain labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateFile {
    pub maps: String,
    pub domains: Vec<String>,
    #[serde(default)]
    pub component_ids: Option<Vec<String>>,
}

pub fn load_template_file(path: &Path) -> Result<Template> {
    let desc: TemplateFile = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let maps = read_matrix(base.join(&desc.maps))?;
    let ids = desc
        .component_ids
        .unwrap_or_else(|| (0..maps.rows()).map(|i| format!("C{i:03}")).collect());
    Template::new(maps, ids, desc.domains, None).context(|| format!("template {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedSubject {
    pub id: String,
    pub label: String,
    pub units: Vec<UnitReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub class_set: Vec<String>,
    pub domains: Vec<String>,
    pub component_ids: Vec<String>,
    pub subjects: Vec<IndexedSubject>,
}

impl FeatureIndex {
    pub fn domain_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, d) in self.domains.iter().enumerate() {
            match out.iter_mut().find(|(n, _)| n == d) {
                Some((_, v)) => v.push(i),
                None => out.push((d.clone(), vec![i])),
            }
        }
        out
    }
}

pub fn extract(cfg: &RunConfig, out: &Path, manifest: Option<&Path>) -> Result<FeatureIndex> {
    let default_manifest = out.join("dataset").join("manifest.json");
    let dataset = load_dataset(manifest.unwrap_or(&default_manifest))?;
    let template = match cfg.template.as_str() {
        "synthetic" | "n53" | "n105" => dataset.template.clone(),
        path => load_template_file(Path::new(path))?,
    };
    let dir = out.join("features");
    create_dir(&dir)?;
    let extractions: Vec<_> = dataset
        .subjects
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            extract_features(s, &template, &cfg.scica, derive_seed(cfg.seed, &[TAG_SCICA, i as u64]))
                .context(|| format!("extracting subject {:?}", s.id))
        })
        .collect::<Result<_>>()?;
    let mut subjects = Vec::with_capacity(extractions.len());
    for (s, ex) in dataset.subjects.iter().zip(extractions) {
        let stalled = ex.units.iter().filter(|u| !u.converged).count();
        if stalled > 0 {
            log::warn!("subject {}: {stalled} unit(s) hit the iteration cap", s.id);
        }
        write_matrix(&ex.features.spatial_maps, dir.join(format!("{}.sm.msmx", s.id)))?;
        write_matrix(&ex.features.time_courses, dir.join(format!("{}.tc.msmx", s.id)))?;
        subjects.push(IndexedSubject {
            id: s.id.clone(),
            label: s.label.clone(),
            units: ex.units,
        });
    }
    let index = FeatureIndex {
        class_set: dataset.class_set.clone(),
        domains: template.domains.clone(),
        component_ids: template.component_ids.clone(),
        subjects,
    };
    write_json(&dir.join("index.json"), &index)?;
    Ok(index)
}

pub fn read_index(out: &Path) -> Result<FeatureIndex> {
    read_json(&out.join("features").join("index.json"))
}

/// Writes `<id>.fnc.msmx` for every extracted subject.
pub fn fnc(cfg: &RunConfig, out: &Path) -> Result<usize> {
    let index = read_index(out)?;
    let dir = out.join("features");
    index
        .subjects
        .par_iter()
        .map(|s| {
            let tc = read_matrix(dir.join(format!("{}.tc.msmx", s.id)))?;
            let f = compute_fnc_with(&tc, &cfg.fnc).context(|| format!("FNC of subject {:?}", s.id))?;
            write_matrix(f.as_matrix(), dir.join(format!("{}.fnc.msmx", s.id)))
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(index.subjects.len())
}

/// Features of the subjects whose label is in `class_set`, with class indices.
pub struct Cohort {
    pub index: FeatureIndex,
    pub features: Vec<SubjectFeatures>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
}

pub fn load_cohort(out: &Path, class_set: &[String], need_fnc: bool) -> Result<Cohort> {
    let index = read_index(out)?;
    let dir = out.join("features");
    for c in class_set {
        if !index.subjects.iter().any(|s| &s.label == c) {
            return Err(Error::MissingClass(c.clone()));
        }
    }
    let chosen: Vec<&IndexedSubject> = index.subjects.iter().filter(|s| class_set.contains(&s.label)).collect();
    let features = chosen
        .par_iter()
        .map(|s| {
            let fnc_path = dir.join(format!("{}.fnc.msmx", s.id));
            let fnc = if fnc_path.exists() {
                Some(read_matrix(&fnc_path)?)
            } else if need_fnc {
                return Err(Error::MissingFile(fnc_path)).context(|| "run the fnc stage first");
            } else {
                None
            };
            let f = SubjectFeatures {
                subject_id: s.id.clone(),
                spatial_maps: read_matrix(dir.join(format!("{}.sm.msmx", s.id)))?,
                time_courses: read_matrix(dir.join(format!("{}.tc.msmx", s.id)))?,
                fnc,
            };
            f.validate(index.component_ids.len())?;
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = chosen
        .iter()
        .map(|s| class_set.iter().position(|c| c == &s.label).unwrap())
        .collect();
    Ok(Cohort {
        features,
        labels,
        classes: class_set.to_vec(),
        index,
    })
}

fn any_fnc(sets: &[FeatureSet]) -> bool {
    sets.iter().any(|f| f.use_fnc())
}

fn search_config(cfg: &RunConfig, mode: &SelectionMode) -> SsfsConfig {
    let mut s = cfg.selection.search.clone();
    if *mode == SelectionMode::Sfs {
        s.beam_width = 1;
    }
    s.seed = derive_seed(cfg.seed, &[TAG_SELECT, s.seed]);
    s
}

fn svm_config(cfg: &RunConfig) -> SvmConfig {
    SvmConfig {
        seed: derive_seed(cfg.seed, &[TAG_SVM, cfg.svm.seed]),
        ..cfg.svm.clone()
    }
}

fn fixed_components(mode: &SelectionMode, k: usize) -> Option<Vec<usize>> {
    match mode {
        SelectionMode::FixedAll => Some((0..k).collect()),
        SelectionMode::Fixed(v) => Some(v.clone()),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutput {
    pub features: String,
    pub mode: String,
    pub best_components: Vec<String>,
    pub result: SelectionResult,
}

/// Beam search over all subjects of the class set (exploratory; the
/// evaluation stage nests its own selection inside each outer fold).
pub fn select(cfg: &RunConfig, out: &Path) -> Result<Vec<SelectionOutput>> {
    let sets = cfg.feature_sets()?;
    let mode = match cfg.selection_mode()? {
        SelectionMode::Sfs => SelectionMode::Sfs,
        _ => SelectionMode::Ssfs,
    };
    let cohort = load_cohort(out, &cfg.eval.class_set, any_fnc(&sets))?;
    let source = KernelSource::new(&cohort.features, cfg.gram_cache)?;
    let svm = svm_config(cfg);
    let search = search_config(cfg, &mode);
    let domains = cohort.index.domain_groups();
    let all: Vec<usize> = (0..cohort.features.len()).collect();
    let mut outputs = Vec::new();
    let mut trace = String::from("features,stage,domain,candidate,score,kept\n");
    for fs_ in &sets {
        let ctx = ScoringContext {
            source: &source,
            labels: &cohort.labels,
            classes: &cohort.classes,
            kernel: &cfg.kernel,
            use_fnc: fs_.use_fnc(),
            svm: &svm,
        };
        let result = ssfs(&ctx, &all, &domains, &search)?;
        for line in result.trace_csv().lines().skip(1) {
            trace.push_str(fs_.name());
            trace.push(',');
            trace.push_str(line);
            trace.push('\n');
        }
        outputs.push(SelectionOutput {
            features: fs_.name().into(),
            mode: mode.tag().into(),
            best_components: result.best_set.iter().map(|&i| cohort.index.component_ids[i].clone()).collect(),
            result,
        });
    }
    let dir = out.join("selection");
    create_dir(&dir)?;
    write_text(&dir.join("trace.csv"), &trace)?;
    write_json(&dir.join("selection.json"), &outputs)?;
    Ok(outputs)
}

/// Kernel over the class-set cohort for each feature set, using the fixed
/// selection or the selection stage's best set.
pub fn kernel(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let sets = cfg.feature_sets()?;
    let mode = cfg.selection_mode()?;
    let cohort = load_cohort(out, &cfg.eval.class_set, any_fnc(&sets))?;
    let k = cohort.index.component_ids.len();
    let selected_for = |name: &str| -> Result<Vec<usize>> {
        if let Some(v) = fixed_components(&mode, k) {
            return Ok(v);
        }
        let sel: Vec<SelectionOutput> = read_json(&out.join("selection").join("selection.json"))
            .context(|| "run the select stage first")?;
        sel.into_iter()
            .find(|s| s.features == name)
            .map(|s| s.result.best_set)
            .ok_or_else(|| Error::InvalidInput(format!("no selection for feature set {name}")))
    };
    let source = KernelSource::new(&cohort.features, false)?;
    let all: Vec<usize> = (0..cohort.features.len()).collect();
    let dir = out.join("kernel");
    create_dir(&dir)?;
    let mut written = Vec::new();
    for fs_ in &sets {
        let selected = selected_for(fs_.name())?;
        let raw = source.raw(&all, &selected, &cfg.kernel, fs_.use_fnc())?;
        let km = KernelMatrix {
            values: apply_spectrum_fix(&raw, cfg.kernel.spectrum_fix),
            subject_ids: cohort.features.iter().map(|f| f.subject_id.clone()).collect(),
        };
        km.save(&dir, fs_.name())?;
        written.push(dir.join(format!("{}.msmx", fs_.name())));
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutput {
    pub label: String,
    pub components: Vec<usize>,
    pub stats: BaselineStats,
}

/// Runs the outer protocol for every feature set and writes the CSV/JSON
/// reports (no SVG; see [`report`]).
pub fn evaluate(cfg: &RunConfig, out: &Path) -> Result<(Vec<ExperimentReport>, Vec<BaselineOutput>)> {
    let sets = cfg.feature_sets()?;
    let mode = cfg.selection_mode()?;
    let cohort = load_cohort(out, &cfg.eval.class_set, any_fnc(&sets))?;
    let k = cohort.index.component_ids.len();
    let source = KernelSource::new(&cohort.features, cfg.gram_cache)?;
    let domains = cohort.index.domain_groups();
    let svm = svm_config(cfg);
    let eval = EvalConfig {
        seed: derive_seed(cfg.seed, &[TAG_EVAL, cfg.eval.seed]),
        ..cfg.eval.clone()
    };
    let selection = match fixed_components(&mode, k) {
        Some(v) => FeatureSelection::Fixed(v),
        None => FeatureSelection::Search(search_config(cfg, &mode)),
    };
    let mut reports = Vec::new();
    let mut baselines = Vec::new();
    for fs_ in &sets {
        let e = Experiment {
            source: &source,
            labels: &cohort.labels,
            classes: &cohort.classes,
            domains: &domains,
            kernel: &cfg.kernel,
            use_fnc: fs_.use_fnc(),
            svm: &svm,
            eval: &eval,
            selection: &selection,
            label: format!("{}/{}", fs_.name(), mode.tag()),
        };
        let report = run_experiment(&e).context(|| format!("evaluating {}", e.label))?;
        if cfg.eval.permutation_rounds > 0 {
            // The baseline reuses the most frequently selected set.
            let mut counts: BTreeMap<&Vec<usize>, usize> = BTreeMap::new();
            for r in &report.rows {
                *counts.entry(&r.selected).or_default() += 1;
            }
            let top = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).unwrap().0.to_vec();
            let fixed = FeatureSelection::Fixed(top.clone());
            let be = Experiment { selection: &fixed, label: e.label.clone(), ..e };
            let stats = permutation_baseline(&be, cfg.eval.permutation_rounds, derive_seed(cfg.seed, &[TAG_PERMUTE]))?;
            baselines.push(BaselineOutput {
                label: e.label.clone(),
                components: top,
                stats,
            });
        }
        reports.push(report);
    }
    let dir = out.join("eval");
    write_reports(&dir, &reports)?;
    write_json(&dir.join("baseline.json"), &baselines)?;
    Ok((reports, baselines))
}

/// Renders `report.svg` from `report.json`.
pub fn report(out: &Path) -> Result<Vec<ExperimentReport>> {
    let dir = out.join("eval");
    let reports: Vec<ExperimentReport> = read_json(&dir.join("report.json"))?;
    write_text(&dir.join("report.svg"), &render_svg(&reports))?;
    Ok(reports)
}

/// simulate → extract → fnc → evaluate → report (plus select when the
/// selection mode is a search).
pub fn run_all(cfg: &RunConfig, out: &Path) -> Result<Vec<ExperimentReport>> {
    simulate(cfg, out)?;
    extract(cfg, out, None)?;
    fnc(cfg, out)?;
    if matches!(cfg.selection_mode()?, SelectionMode::Sfs | SelectionMode::Ssfs) {
        select(cfg, out)?;
    }
    evaluate(cfg, out)?;
    report(out)
}

/// `rows × cols` summary string used by the CLI.
pub fn describe(m: &MatrixF64) -> String {
    format!("{}x{}", m.rows(), m.cols())
}

//! End-to-end acceptance checks. Each test reports one `PASS`/`FAIL` line
//! with the measured values on stderr, then asserts.

use std::fs;
use std::io::Write;
use std::process::Command;

use medresp::config::RunConfig;
use medresp::datamodel::SubjectFeatures;
use medresp::eval::metrics::{average_precision, expected_random_macro_ap};
use medresp::eval::{permutation_baseline, run_experiment, EvalConfig, Experiment, FeatureSelection};
use medresp::fnc::{compute_fnc, compute_fnc_with, FncConfig};
use medresp::kernels::{orthonormalize, pabs_kernel, pabs_similarity, KernelSource, PabsKernelParams};
use medresp::scica::{extract_features, ScicaConfig};
use medresp::selection::{ssfs, ScoringContext, SsfsConfig};
use medresp::svm::{check_kkt, dual_objective, solve_binary_smo, SvmConfig};
use medresp::synth::{
    generate_cohort, generate_interaction_cohort, mean_abs_row_corr, InteractionConfig, SynthConfig,
};
use medresp::MatrixF64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

// Written straight to stderr so the line survives the test harness's output capture.
fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stderr().lock().write_all(line.as_bytes()).unwrap();
    assert!(pass, "{name} failed: {detail}");
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> MatrixF64 {
    MatrixF64::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

// ---------------------------------------------------------------- oracles

/// Modified Gram-Schmidt (two passes) on the rows of `m`.
fn gram_schmidt_rows(m: &MatrixF64) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for i in 0..m.rows() {
        let mut v = m.row(i).to_vec();
        for _ in 0..2 {
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / n).collect());
    }
    q
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
#[allow(clippy::needless_range_loop)]
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Sum of singular values of `Q_a Q_bᵀ`, via eigenvalues of `MᵀM`.
fn pabs_oracle(a: &MatrixF64, b: &MatrixF64) -> f64 {
    let (qa, qb) = (gram_schmidt_rows(a), gram_schmidt_rows(b));
    let k = qa.len();
    let m: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| qa[i].iter().zip(&qb[j]).map(|(x, y)| x * y).sum()).collect())
        .collect();
    let mtm: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| (0..k).map(|r| m[r][i] * m[r][j]).sum()).collect())
        .collect();
    jacobi_eigenvalues(mtm).into_iter().map(|l| l.max(0.0).sqrt()).sum()
}

fn pearson_naive(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..x.len() {
        num += (x[i] - mx) * (y[i] - my);
        dx += (x[i] - mx) * (x[i] - mx);
        dy += (y[i] - my) * (y[i] - my);
    }
    num / (dx.sqrt() * dy.sqrt())
}

/// Residual of an ordinary least-squares line fit through the 2x2 normal equations.
fn detrend_naive(y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let (mut st, mut stt, mut sy, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let t = i as f64;
        st += t;
        stt += t * t;
        sy += v;
        sty += t * v;
    }
    let det = n * stt - st * st;
    let a = (stt * sy - st * sty) / det;
    let b = (n * sty - st * sy) / det;
    y.iter().enumerate().map(|(i, v)| v - a - b * i as f64).collect()
}

/// Euclidean projection onto `{0 ≤ α ≤ ub, yᵀα = 0}` by bisection on the multiplier.
fn project(z: &[f64], y: &[f64], ub: &[f64]) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> { z.iter().zip(y).zip(ub).map(|((z, y), u)| (z - lam * y).clamp(0.0, *u)).collect() };
    let g = |lam: f64| -> f64 { at(lam).iter().zip(y).map(|(a, y)| a * y).sum() };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while g(lo) < 0.0 {
        lo *= 2.0;
    }
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Accelerated projected gradient ascent on the SVM dual.
fn qp_oracle(k: &MatrixF64, y: &[f64], ub: &[f64]) -> f64 {
    let n = y.len();
    let q = MatrixF64::from_fn(n, n, |i, j| y[i] * y[j] * k.get(i, j));
    let lip = (0..n).map(|i| (0..n).map(|j| q.get(i, j).abs()).sum::<f64>()).fold(0.0, f64::max).max(1e-12);
    let mut x = vec![0.0; n];
    let mut v = x.clone();
    let mut t = 1.0f64;
    for _ in 0..40_000 {
        let grad: Vec<f64> = (0..n).map(|i| 1.0 - (0..n).map(|j| q.get(i, j) * v[j]).sum::<f64>()).collect();
        let step: Vec<f64> = (0..n).map(|i| v[i] + grad[i] / lip).collect();
        let next = project(&step, y, ub);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        v = (0..n).map(|i| next[i] + (t - 1.0) / t_next * (next[i] - x[i])).collect();
        x = next;
        t = t_next;
    }
    dual_objective(&x, y, k)
}

/// Mean precision at each positive's rank; tied scores keep input order.
fn ap_oracle(y: &[bool], scores: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let (mut hits, mut total) = (0.0, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if y[i] {
            hits += 1.0;
            total += hits / (rank + 1) as f64;
        }
    }
    total / hits
}

// ----------------------------------------------------------------- checks

#[test]
fn kernel_identities() {
    let p = PabsKernelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut self_err, mut orth_err) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let a = orthonormalize(&gaussian(&mut rng, 7, 300)).unwrap();
        self_err = self_err.max((pabs_kernel(&a, &a, &p).unwrap() - 7.0f64.tanh()).abs());
        // Two 7-dimensional subspaces drawn from one orthonormal 14-frame.
        let joint = orthonormalize(&gaussian(&mut rng, 14, 300)).unwrap();
        let q = joint.values();
        let half = |off: usize| MatrixF64::from_fn(7, 300, |i, v| q.get(v, i + off));
        let (b, c) = (orthonormalize(&half(0)).unwrap(), orthonormalize(&half(7)).unwrap());
        orth_err = orth_err.max(pabs_kernel(&b, &c, &p).unwrap().abs());
    }
    verdict(
        "kernel identities",
        self_err <= 1e-12 && orth_err <= 1e-12,
        format!("max |k(a,a) - tanh 7| = {self_err:.2e}, max |k(orthogonal)| = {orth_err:.2e} (tol 1e-12)"),
    );
}

#[test]
fn pabs_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0f64;
    for pair in 0..50 {
        let a = gaussian(&mut rng, 7, 200);
        // Half the pairs share part of their span so the cosines are spread out.
        let b = if pair % 2 == 0 {
            gaussian(&mut rng, 7, 200)
        } else {
            let noise = gaussian(&mut rng, 7, 200);
            MatrixF64::from_fn(7, 200, |i, v| a.get((i + 1) % 7, v) * (i as f64 / 7.0) + noise.get(i, v))
        };
        let got = pabs_similarity(&orthonormalize(&a).unwrap(), &orthonormalize(&b).unwrap()).unwrap();
        worst = worst.max((got - pabs_oracle(&a, &b)).abs());
    }
    verdict("PABS oracle equivalence", worst <= 1e-10, format!("50 pairs, V=200, K=7: max abs error {worst:.2e} (tol 1e-10)"));
}

#[test]
fn fnc_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (mut raw_err, mut det_err, mut asym, mut diag) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let trend = gaussian(&mut rng, 1, 20);
        let tc = gaussian(&mut rng, 164, 20);
        let tc = MatrixF64::from_fn(164, 20, |t, k| tc.get(t, k) + 0.02 * t as f64 * trend.get(0, k));
        let plain = compute_fnc_with(&tc, &FncConfig { detrend: false, bandpass: None }).unwrap();
        let detrended = compute_fnc(&tc).unwrap();
        let cols: Vec<Vec<f64>> = (0..20).map(|k| tc.column(k)).collect();
        let dcols: Vec<Vec<f64>> = cols.iter().map(|c| detrend_naive(c)).collect();
        for i in 0..20 {
            for j in 0..20 {
                raw_err = raw_err.max((plain.get(i, j) - pearson_naive(&cols[i], &cols[j])).abs());
                det_err = det_err.max((detrended.get(i, j) - pearson_naive(&dcols[i], &dcols[j])).abs());
            }
        }
        for f in [&plain, &detrended] {
            asym = asym.max(f.as_matrix().max_asymmetry());
            diag = diag.max((0..20).map(|i| (f.get(i, i) - 1.0).abs()).fold(0.0, f64::max));
        }
    }
    verdict(
        "FNC oracle equivalence",
        raw_err <= 1e-12 && det_err <= 1e-12 && asym == 0.0 && diag == 0.0,
        format!(
            "164x20: max error {raw_err:.2e} raw, {det_err:.2e} detrended (tol 1e-12); asymmetry {asym:.1e}, diagonal error {diag:.1e}"
        ),
    );
}

#[test]
fn smo_matches_qp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let cfg = SvmConfig::default();
    let (mut gap, mut kkt) = (0.0f64, 0.0f64);
    for problem in 0..20 {
        let n = rng.gen_range(4..=15);
        let d = rng.gen_range(1..=n);
        let x = gaussian(&mut rng, n, d);
        let k = MatrixF64::from_fn(n, n, |i, j| (0..d).map(|r| x.get(i, r) * x.get(j, r)).sum::<f64>() / d as f64);
        let mut y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let cfg = SvmConfig { seed: problem, ..cfg.clone() };
        let m = solve_binary_smo(&k, &y, &cfg).unwrap();
        let oracle = qp_oracle(&k, &y, &cfg.bounds(&y));
        gap = gap.max((m.dual_objective(&k) - oracle).abs());
        kkt = kkt.max(check_kkt(&m, &k).unwrap().max_violation);
    }
    verdict(
        "SVM correctness",
        gap <= 1e-3 && kkt <= 1e-3,
        format!("20 PSD problems, N<=15: max |dual - QP oracle| {gap:.2e}, max KKT violation {kkt:.2e} (tol 1e-3)"),
    );
}

#[test]
fn metrics_match_enumeration() {
    let example = average_precision(&[true, false, true], &[0.9, 0.8, 0.7]).unwrap();
    let mut worst = 0.0f64;
    let mut perfect_ok = true;
    let mut degenerate_rejected = true;
    let mut labelings = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for n in 1..=8usize {
        let mut distinct: Vec<f64> = (0..n).map(|i| i as f64 + rng.gen::<f64>() * 0.5).collect();
        distinct.reverse();
        // Pairs of tied scores; ties keep the original order.
        let tied: Vec<f64> = (0..n).map(|i| (i / 2) as f64).collect();
        for mask in 0u32..(1 << n) {
            let y: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            if !y.contains(&true) || !y.contains(&false) {
                degenerate_rejected &= average_precision(&y, &distinct).is_err();
                continue;
            }
            labelings += 1;
            for scores in [&distinct, &tied] {
                worst = worst.max((average_precision(&y, scores).unwrap() - ap_oracle(&y, scores)).abs());
            }
            let perfect: Vec<f64> = y.iter().zip(&distinct).map(|(&p, s)| if p { 100.0 + s } else { *s }).collect();
            perfect_ok &= average_precision(&y, &perfect).unwrap() == 1.0;
        }
    }
    verdict(
        "metric correctness",
        (example - 0.833333).abs() <= 1e-6 && (example - 5.0 / 6.0).abs() <= 1e-9 && worst <= 1e-12 && perfect_ok && degenerate_rejected,
        format!(
            "AP example {example:.9}; max error vs enumeration over {labelings} labelings (n<=8, distinct and tied scores) {worst:.1e}; \
             perfect ranking exactly 1: {perfect_ok}; one-class input rejected: {degenerate_rejected}"
        ),
    );
}

#[test]
fn scica_recovers_planted_maps() {
    let cfg = SynthConfig::default();
    let (d, truth) = generate_cohort(&cfg, 0).unwrap();
    let scica = ScicaConfig::default();
    let corrs: Vec<f64> = d
        .subjects
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let ex = extract_features(s, &d.template, &scica, i as u64).unwrap();
            mean_abs_row_corr(&ex.features.spatial_maps, &truth.subject_maps[i])
        })
        .collect();
    let mean = corrs.iter().sum::<f64>() / corrs.len() as f64;
    let min = corrs.iter().cloned().fold(1.0, f64::min);
    let (k, v) = d.template.maps.shape();
    let t = d.subjects[0].bold.rows();
    verdict(
        "scICA recovery",
        truth.snr >= 5.0 && mean >= 0.9 && (v, k, t) == (2048, 20, 164),
        format!(
            "{} subjects, V={v}, K={k}, T={t}, SNR {:.2}: mean |corr| {mean:.4} (subject min {min:.4}; need >= 0.9)",
            corrs.len(),
            truth.snr
        ),
    );
}

fn extract_cohort(cfg: &SynthConfig, seed: u64) -> (medresp::datamodel::Dataset, Vec<SubjectFeatures>) {
    let (d, _) = generate_cohort(cfg, seed).unwrap();
    let feats = d
        .subjects
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut f = extract_features(s, &d.template, &ScicaConfig::default(), i as u64).unwrap().features;
            f.fnc = Some(compute_fnc(&f.time_courses).unwrap().into_matrix());
            f
        })
        .collect();
    (d, feats)
}

#[test]
fn end_to_end_signal_detection() {
    let cfg = SynthConfig {
        class_scale: 0.5,
        min_class_count: 5,
        spatial_effect: 1.0,
        fnc_effect: 0.5,
        ..SynthConfig::default()
    };
    let (d, feats) = extract_cohort(&cfg, 7);
    let counts = d.class_counts();
    let labels = d.label_indices();
    let source = KernelSource::new(&feats, true).unwrap();
    let domains = d.template.domain_groups();
    let eval = EvalConfig { outer_folds: 5, repeats: 50, seed: 7, ..EvalConfig::default() };
    let selection = FeatureSelection::Fixed((0..d.template.n_components()).collect());
    let e = Experiment {
        source: &source,
        labels: &labels,
        classes: &d.class_set,
        domains: &domains,
        kernel: &PabsKernelParams::default(),
        use_fnc: true,
        svm: &SvmConfig::default(),
        eval: &eval,
        selection: &selection,
        label: "sm+fnc".into(),
    };
    let report = run_experiment(&e).unwrap();
    let auc = report.metric("macro_pr_auc").unwrap();
    let base = permutation_baseline(&e, 100, 99).unwrap();
    let whole_chance = expected_random_macro_ap(&counts);
    let pass = auc.n == 250
        && auc.mean >= 0.85
        && (base.mean - base.chance).abs() <= 0.1
        && (base.pooled_mean - base.prevalence).abs() <= 0.1;
    verdict(
        "end-to-end signal detection",
        pass,
        format!(
            "counts {counts:?}, 5x50 folds: macro PR-AUC mean {:.4} median {:.4} (need >= 0.85); 100 permutations: \
             per-fold mean {:.4} vs random-ranking chance {:.4}, pooled {:.4} vs prevalence {:.4} (tol 0.1; \
             whole-cohort random-ranking chance {whole_chance:.4})",
            auc.mean, auc.median, base.mean, base.chance, base.pooled_mean, base.prevalence
        ),
    );
}

fn beam_pair(ctx: &ScoringContext, domains: &[(String, Vec<usize>)], base: &SsfsConfig) -> (medresp::selection::SelectionResult, medresp::selection::SelectionResult) {
    let all: Vec<usize> = (0..ctx.labels.len()).collect();
    let sfs = ssfs(ctx, &all, domains, &SsfsConfig { beam_width: 1, ..base.clone() }).unwrap();
    let beam = ssfs(ctx, &all, domains, &SsfsConfig { beam_width: 5, ..base.clone() }).unwrap();
    (sfs, beam)
}

#[test]
fn ssfs_dominates_sfs() {
    let classes = vec!["A".to_string(), "B".to_string()];
    let kernel = PabsKernelParams::default();
    let svm = SvmConfig::default();
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..5u64 {
        let (f, labels, domains) = generate_interaction_cohort(&InteractionConfig { seed, ..Default::default() }).unwrap();
        let source = KernelSource::new(&f, true).unwrap();
        let ctx = ScoringContext { source: &source, labels: &labels, classes: &classes, kernel: &kernel, use_fnc: false, svm: &svm };
        let (sfs, beam) = beam_pair(&ctx, &domains, &SsfsConfig { seed, ..SsfsConfig::default() });
        let ok = beam.best_score > sfs.best_score && beam.best_set == vec![1, 3];
        pass &= ok;
        lines.push(format!(
            "interaction seed {seed}: SFS {:?} {:.4}, SSFS {:?} {:.4}",
            sfs.best_set, sfs.best_score, beam.best_set, beam.best_score
        ));
    }
    let small = SynthConfig {
        grid: [10, 10, 6],
        n_components: 8,
        n_domains: 3,
        timepoints: 100,
        class_scale: 0.4,
        min_class_count: 6,
        informative_components: 2,
        spatial_effect: 0.4,
        ..SynthConfig::default()
    };
    for seed in 0..3u64 {
        let (d, feats) = extract_cohort(&small, seed);
        let labels = d.label_indices();
        let source = KernelSource::new(&feats, true).unwrap();
        let ctx = ScoringContext { source: &source, labels: &labels, classes: &d.class_set, kernel: &kernel, use_fnc: true, svm: &svm };
        let cfg = SsfsConfig { inner_folds: 3, inner_repeats: 3, seed, ..SsfsConfig::default() };
        let (sfs, beam) = beam_pair(&ctx, &d.template.domain_groups(), &cfg);
        pass &= beam.best_score >= sfs.best_score;
        lines.push(format!("synthetic seed {seed}: SFS {:.4}, SSFS {:.4}", sfs.best_score, beam.best_score));
    }
    verdict(
        "SSFS dominance",
        pass,
        format!("SSFS strictly better and recovers [1, 3] on interaction cohorts, never worse elsewhere\n  {}", lines.join("\n  ")),
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn fnc_features_help() {
    let cfg = SynthConfig {
        class_scale: 0.5,
        min_class_count: 5,
        spatial_effect: 0.3,
        fnc_effect: 0.2,
        ..SynthConfig::default()
    };
    let mut sm = Vec::new();
    let mut both = Vec::new();
    for seed in 0..20u64 {
        let (d, feats) = extract_cohort(&cfg, 100 + seed);
        let labels = d.label_indices();
        let source = KernelSource::new(&feats, true).unwrap();
        let domains = d.template.domain_groups();
        let eval = EvalConfig { repeats: 5, seed, ..EvalConfig::default() };
        let selection = FeatureSelection::Fixed((0..d.template.n_components()).collect());
        for (use_fnc, out) in [(false, &mut sm), (true, &mut both)] {
            let e = Experiment {
                source: &source,
                labels: &labels,
                classes: &d.class_set,
                domains: &domains,
                kernel: &PabsKernelParams::default(),
                use_fnc,
                svm: &SvmConfig::default(),
                eval: &eval,
                selection: &selection,
                label: String::new(),
            };
            out.push(run_experiment(&e).unwrap().metric("macro_pr_auc").unwrap().median);
        }
    }
    let wins = sm.iter().zip(&both).filter(|(a, b)| b >= a).count();
    let (m_sm, m_both) = (median(sm), median(both));
    verdict(
        "feature-set ordering",
        m_both >= m_sm,
        format!("20 seeds, spatial effect 0.3, FNC effect 0.2: median macro PR-AUC SM {m_sm:.4}, SM+FNC {m_both:.4}; SM+FNC >= SM on {wins}/20 seeds"),
    );
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_json(
        r#"{"seed": 5,
            "synth": {"class_scale": 0.3, "min_class_count": 5},
            "selection": {"mode": "ssfs", "search": {"inner_folds": 2, "inner_repeats": 2, "beam_width": 2}},
            "eval": {"outer_folds": 3, "repeats": 2, "permutation_rounds": 3}}"#,
    )
    .unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let mut outputs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "4")] {
        let out = dir.path().join(name);
        let r = Command::new(env!("CARGO_BIN_EXE_medresp"))
            .args(["run", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads])
            .output()
            .unwrap();
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        outputs.push((fs::read(out.join("eval/report.csv")).unwrap(), fs::read(out.join("eval/summary.csv")).unwrap()));
    }
    let same = outputs[0] == outputs[1];
    verdict(
        "determinism",
        same && !outputs[0].0.is_empty(),
        format!(
            "two full runs (1 and 4 threads), master seed 5: report.csv {} bytes, summary.csv {} bytes, identical: {same}",
            outputs[0].0.len(),
            outputs[0].1.len()
        ),
    );
}

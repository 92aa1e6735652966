//! Acceptance gate: one PASS/FAIL/SKIP line per criterion, nonzero exit on any FAIL.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use mvrec::classifiers::{
    sdpa_logits, zip_forward, zip_objective, Classifier, ClassifierConfig, ClassifierKind, SupportCache,
    SupportSet, TrainConfig, ZipParams,
};
use mvrec::dataset::{
    connected_components, sample_support, synthetic_manifest, Connectivity, DatasetManifest, Mask,
    SyntheticManifestSpec,
};
use mvrec::embedding::{load_embeddings, synthetic_store, EmbeddingStore, LoadOptions, SyntheticEmbeddingConfig};
use mvrec::eval::{episode_inputs, run_experiment, training_ablation, ExperimentConfig, TrainingSetting};
use mvrec::geometry::{read_views_file, AugmentConfig};
use mvrec::numerics::{check_gradients, Tensor2};
use mvrec::rng::stream_rng;
use rand::Rng;

// Tolerances and budgets.
const IDENTITY_SAMPLES: usize = 1000;
const IDENTITY_CHANNELS: usize = 64;
const EQUIVALENCE_SAMPLES: usize = 1000;
const EQUIVALENCE_TOL: f64 = 1e-12;
const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_BUDGET: Duration = Duration::from_secs(10);
const SDPA_TOL: f64 = 1e-12;
const E2E_ZIP_MIN: f64 = 0.95;
const E2E_BUDGET: Duration = Duration::from_secs(60);
const PROPERTY_SEEDS: u64 = 20;
const HARD_SHOTS: usize = 1;
const HARD_SIGMA_INST: f64 = 0.15;
const CC_MASKS: usize = 1000;
const CC_BUDGET: Duration = Duration::from_secs(5);
const REPLICATION_TARGETS: [(usize, f64); 3] = [(1, 0.737), (3, 0.861), (5, 0.894)];
const REPLICATION_TOL: f64 = 0.020;

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn pass_if(ok: bool, detail: String) -> Outcome {
    Outcome { pass: Some(ok), detail }
}

fn random_vec(r: &mut impl Rng, c: usize) -> Vec<f64> {
    (0..c).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn zip_identity() -> Outcome {
    let mut r = stream_rng(0, "acceptance:identity");
    let p = ZipParams::fresh(&Tensor2::zeros(1, IDENTITY_CHANNELS));
    let mut mismatches = 0;
    for _ in 0..IDENTITY_SAMPLES {
        let f: Vec<f64> = (0..IDENTITY_CHANNELS).map(|_| r.random_range(-10.0..10.0)).collect();
        let out = zip_forward(&f, &p).unwrap();
        if out.iter().zip(&f).any(|(a, b)| a.to_bits() != b.to_bits()) {
            mismatches += 1;
        }
    }
    pass_if(mismatches == 0, format!("{mismatches}/{IDENTITY_SAMPLES} vectors differ bitwise (C={IDENTITY_CHANNELS})"))
}

fn zip_tip_equivalence() -> Outcome {
    let mut r = stream_rng(0, "acceptance:equivalence");
    let mut worst = 0.0f64;
    for _ in 0..EQUIVALENCE_SAMPLES {
        let n = r.random_range(2..6);
        let k = r.random_range(1..6);
        let c = r.random_range(2..65);
        let rows: Vec<Vec<f64>> = (0..n * k).map(|_| random_vec(&mut r, c)).collect();
        let labels: Vec<usize> = (0..n * k).map(|i| i / k).collect();
        let cache = SupportCache::new(
            Tensor2::from_rows(&rows).unwrap(),
            labels,
            (0..n).map(|i| format!("c{i}")).collect(),
        )
        .unwrap();
        let cfg = ClassifierConfig::default();
        let zip = Classifier::new(ClassifierKind::Zip, cache.clone(), cfg.clone()).unwrap();
        let tip = Classifier::new(ClassifierKind::Tip, cache, cfg).unwrap();
        let q = random_vec(&mut r, c);
        let a = zip.logits(&q).unwrap();
        let b = tip.logits(&q).unwrap();
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    pass_if(worst <= EQUIVALENCE_TOL, format!("max |Δlogit| = {worst:.3e} over {EQUIVALENCE_SAMPLES} pairs (tol {EQUIVALENCE_TOL:e})"))
}

fn toy_support(seed: u64, n: usize, k: usize, v: usize, c: usize) -> SupportSet {
    let mut r = stream_rng(seed, "acceptance:toy");
    let mut rows = Vec::new();
    let mut views = Vec::new();
    let mut labels = Vec::new();
    for class in 0..n {
        for _ in 0..k {
            let t = Tensor2::from_vec(
                v,
                c,
                (0..v * c)
                    .map(|i| if i % c == class { 1.0 } else { 0.0 } + r.random_range(-0.4..0.4))
                    .collect(),
            )
            .unwrap();
            rows.push(t.column_means().unwrap());
            views.push(t);
            labels.push(class);
        }
    }
    let cache = SupportCache::new(Tensor2::from_rows(&rows).unwrap(), labels, (0..n).map(|i| format!("c{i}")).collect()).unwrap();
    SupportSet::new(cache, views).unwrap()
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = TrainConfig::default();
    let (mut worst_w, mut worst_b, mut worst_s) = (0.0f64, 0.0f64, 0.0f64);
    let toys = 5;
    for seed in 0..toys {
        let support = toy_support(seed, 3, 2, 4, 6);
        let (batch, labels) = support.view_batch();
        let mut p = ZipParams::fresh(support.cache.features());
        // Away from the zero init so every path carries signal.
        let mut r = stream_rng(seed, "acceptance:params");
        p.w = Tensor2::from_vec(6, 6, (0..36).map(|_| r.random_range(-0.3..0.3)).collect()).unwrap();
        p.b = (0..6).map(|_| r.random_range(-0.3..0.3)).collect();
        let flat = p.to_flat();
        let (nw, nb) = (36, 6);
        let groups = [(0, nw), (nw, nw + nb), (nw + nb, flat.len())];
        for (g, &(lo, hi)) in groups.iter().enumerate() {
            let err = check_gradients(
                |sub: &[f64]| {
                    let mut full = flat.clone();
                    full[lo..hi].copy_from_slice(sub);
                    let e = zip_objective(&p.with_flat(&full), &batch, &labels, support.cache.labels(), 3, &cfg).unwrap();
                    (e.loss.total, e.flat_grad()[lo..hi].to_vec())
                },
                &flat[lo..hi],
                1e-6,
            );
            match g {
                0 => worst_w = worst_w.max(err),
                1 => worst_b = worst_b.max(err),
                _ => worst_s = worst_s.max(err),
            }
        }
    }
    let elapsed = start.elapsed();
    let worst = worst_w.max(worst_b).max(worst_s);
    pass_if(
        worst <= GRADIENT_TOL && elapsed < GRADIENT_BUDGET,
        format!(
            "rel err W {worst_w:.2e}, b {worst_b:.2e}, cache {worst_s:.2e} on {toys} 3-way 2-shot toys (tol {GRADIENT_TOL:e}); {:.2}s (budget {}s)",
            elapsed.as_secs_f64(),
            GRADIENT_BUDGET.as_secs()
        ),
    )
}

fn sdpa_hand_check() -> Outcome {
    let cache = Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let l = sdpa_logits(&[1.0, 0.0], &cache, &[0, 1], 2, 1.0).unwrap();
    let expected = [1.0, (-1.0f64).exp()];
    let err = (l[0] - expected[0]).abs().max((l[1] - expected[1]).abs());
    pass_if(err <= SDPA_TOL, format!("logits [{:.12}, {:.12}], max err {err:.1e} (tol {SDPA_TOL:e})", l[0], l[1]))
}

fn e2e_manifest(seed: u64) -> DatasetManifest {
    synthetic_manifest(&SyntheticManifestSpec {
        num_classes: 5,
        instances_per_class: 20,
        seed,
        ..SyntheticManifestSpec::default()
    })
    .unwrap()
}

fn e2e_embeddings(seed: u64) -> SyntheticEmbeddingConfig {
    SyntheticEmbeddingConfig {
        channels: 32,
        sigma_inst: 0.05,
        sigma_view: 0.2,
        seed,
        ..SyntheticEmbeddingConfig::default()
    }
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let m = e2e_manifest(0);
    let (store, _) = synthetic_store(&m, &e2e_embeddings(0), &AugmentConfig::default(), LoadOptions::default()).unwrap();
    let cfg = ClassifierConfig::default();
    let (mut zip_acc, mut zipf_acc, mut min_train) = (0.0, 0.0, 1.0f64);
    let mut first_full = Vec::new();
    let seeds = [0u64, 1, 2, 3, 4];
    for &seed in &seeds {
        let ep = sample_support(&m, 5, seed).unwrap();
        let (support, queries) = episode_inputs(&m, &ep, &store).unwrap();
        let feats: Vec<&[f64]> = queries.iter().map(|(f, _)| f.as_slice()).collect();
        let acc = |c: &Classifier| {
            let p = c.predict_all(&feats).unwrap();
            p.iter().zip(&queries).filter(|(a, (_, y))| *a == y).count() as f64 / queries.len() as f64
        };
        let zip = Classifier::fit(ClassifierKind::Zip, &support, &cfg).unwrap();
        let zipf = Classifier::fit(ClassifierKind::ZipF, &support, &cfg).unwrap();
        zip_acc += acc(&zip) / seeds.len() as f64;
        zipf_acc += acc(&zipf) / seeds.len() as f64;
        let trace = zipf.loss_trace();
        min_train = min_train.min(trace.iter().map(|e| e.train_accuracy).fold(0.0, f64::max));
        first_full.push(trace.iter().find(|e| e.train_accuracy == 1.0).map(|e| e.iteration));
    }
    let elapsed = start.elapsed();
    let ok = zip_acc >= E2E_ZIP_MIN && min_train == 1.0 && zipf_acc >= zip_acc && elapsed < E2E_BUDGET;
    pass_if(
        ok,
        format!(
            "Zip-Adapter {:.1}% (min {:.0}%), Zip-Adapter-F {:.1}% query, train acc reached 100% at iterations {:?}; {:.1}s (budget {}s)",
            100.0 * zip_acc,
            100.0 * E2E_ZIP_MIN,
            100.0 * zipf_acc,
            first_full,
            elapsed.as_secs_f64(),
            E2E_BUDGET.as_secs()
        ),
    )
}

fn zip_accuracy(m: &DatasetManifest, store: &EmbeddingStore, seed: u64) -> f64 {
    let ep = sample_support(m, 5, seed).unwrap();
    let (support, queries) = episode_inputs(m, &ep, store).unwrap();
    let c = Classifier::fit(ClassifierKind::Zip, &support, &ClassifierConfig::default()).unwrap();
    let feats: Vec<&[f64]> = queries.iter().map(|(f, _)| f.as_slice()).collect();
    let p = c.predict_all(&feats).unwrap();
    p.iter().zip(&queries).filter(|(a, (_, y))| *a == y).count() as f64 / queries.len() as f64
}

fn multi_view_benefit() -> Outcome {
    let (mut v27, mut v1) = (0.0, 0.0);
    for seed in 0..PROPERTY_SEEDS {
        let m = e2e_manifest(seed);
        let emb = e2e_embeddings(seed);
        let (s27, _) = synthetic_store(&m, &emb, &AugmentConfig::default(), LoadOptions::default()).unwrap();
        let (s1, _) = synthetic_store(&m, &emb, &AugmentConfig::single_view(), LoadOptions::default()).unwrap();
        v27 += zip_accuracy(&m, &s27, seed) / PROPERTY_SEEDS as f64;
        v1 += zip_accuracy(&m, &s1, seed) / PROPERTY_SEEDS as f64;
    }
    pass_if(v27 >= v1, format!("Zip-Adapter mean over {PROPERTY_SEEDS} seeds: V=27 {:.2}%, V=1 {:.2}%", 100.0 * v27, 100.0 * v1))
}

fn flood(mask: &Mask, labels: &mut [u32], x: i64, y: i64, label: u32, conn: Connectivity) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    if x < 0 || y < 0 || x >= w || y >= h {
        return;
    }
    let i = (y * w + x) as usize;
    if !mask.get(x as u32, y as u32) || labels[i] != 0 {
        return;
    }
    labels[i] = label;
    for dy in -1..=1i64 {
        for dx in -1..=1i64 {
            if (dx, dy) == (0, 0) || (conn == Connectivity::Four && dx != 0 && dy != 0) {
                continue;
            }
            flood(mask, labels, x + dx, y + dy, label, conn);
        }
    }
}

fn flood_fill_labels(mask: &Mask, conn: Connectivity) -> Vec<u32> {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; (w * h) as usize];
    let mut next = 0;
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) && labels[(y * w + x) as usize] == 0 {
                next += 1;
                flood(mask, &mut labels, x as i64, y as i64, next, conn);
            }
        }
    }
    labels
}

fn cc_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = stream_rng(0, "acceptance:cc");
    let mut mismatches = 0;
    for _ in 0..CC_MASKS {
        let density = r.random_range(0.1..0.9);
        let bits: Vec<bool> = (0..32 * 32).map(|_| r.random_bool(density)).collect();
        let mask = Mask::from_bits(32, 32, bits).unwrap();
        for conn in [Connectivity::Four, Connectivity::Eight] {
            if connected_components(&mask, conn).labels != flood_fill_labels(&mask, conn) {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    pass_if(
        mismatches == 0 && elapsed < CC_BUDGET,
        format!(
            "{mismatches} mismatches over {CC_MASKS} masks x 2 connectivities; {:.2}s (budget {}s)",
            elapsed.as_secs_f64(),
            CC_BUDGET.as_secs()
        ),
    )
}

fn harness_determinism() -> Outcome {
    let m = e2e_manifest(0);
    let (store, _) = synthetic_store(&m, &e2e_embeddings(0), &AugmentConfig::default(), LoadOptions::default()).unwrap();
    let mut cfg = ExperimentConfig {
        shots: vec![1, 5],
        seeds: vec![0, 1],
        ..ExperimentConfig::default()
    };
    cfg.classifier.train.iterations = 50;
    let a = run_experiment(&m, &store, &cfg).unwrap();
    let b = run_experiment(&m, &store, &cfg).unwrap();
    let same = a.to_json() == b.to_json() && a.to_csv() == b.to_csv() && a.to_text() == b.to_text();
    pass_if(same, format!("{} result rows, json/csv/text reports byte-identical: {same}", a.rows().len()))
}

/// Mean Zip-Adapter-F accuracy per training setting, in `TrainingSetting::ALL` order.
fn setting_means(shots: usize, sigma_inst: f64) -> [f64; 4] {
    let mut means = [0.0f64; 4];
    for seed in 0..PROPERTY_SEEDS {
        let m = e2e_manifest(seed);
        let emb = SyntheticEmbeddingConfig {
            sigma_inst,
            ..e2e_embeddings(seed)
        };
        let (store, _) = synthetic_store(&m, &emb, &AugmentConfig::default(), LoadOptions::default()).unwrap();
        let cfg = ExperimentConfig {
            shots: vec![shots],
            seeds: vec![seed],
            ..ExperimentConfig::default()
        };
        let t = training_ablation(&m, &store, &cfg).unwrap();
        for (i, s) in TrainingSetting::ALL.iter().enumerate() {
            means[i] += t.average(s.name(), ClassifierKind::ZipF, shots).unwrap() / PROPERTY_SEEDS as f64;
        }
    }
    means
}

fn describe(means: &[f64; 4]) -> String {
    TrainingSetting::ALL
        .iter()
        .zip(means)
        .map(|(s, m)| format!("{} {:.2}%", s.name(), 100.0 * m))
        .collect::<Vec<_>>()
        .join(", ")
}

fn training_flags_direction() -> Outcome {
    let at = |s: TrainingSetting| TrainingSetting::ALL.iter().position(|x| *x == s).unwrap();
    let gated = setting_means(5, e2e_embeddings(0).sigma_inst);
    let both = gated[at(TrainingSetting::CacheAndZip)];
    let cache = gated[at(TrainingSetting::CacheOnly)];
    let zip = gated[at(TrainingSetting::ZipOnly)];
    let frozen = gated[at(TrainingSetting::Frozen)];
    // Reported, not gated: the standard generator saturates every setting.
    let hard = setting_means(HARD_SHOTS, HARD_SIGMA_INST);
    pass_if(
        both >= cache && both >= zip && cache >= frozen && zip >= frozen,
        format!(
            "5-shot standard generator over {PROPERTY_SEEDS} seeds: {}; harder {HARD_SHOTS}-shot σ_inst {HARD_SIGMA_INST} (not gated): {}",
            describe(&gated),
            describe(&hard)
        ),
    )
}

fn replication() -> Outcome {
    let var = |k: &str| std::env::var_os(k).map(PathBuf::from);
    let (Some(manifest), Some(views), Some(embeddings)) =
        (var("MVREC_MANIFEST"), var("MVREC_VIEWS"), var("MVREC_EMBEDDINGS"))
    else {
        return Outcome {
            pass: None,
            detail: "MVREC_MANIFEST / MVREC_VIEWS / MVREC_EMBEDDINGS not set".into(),
        };
    };
    let m = DatasetManifest::read(&manifest).unwrap();
    let views = read_views_file(&views).unwrap();
    let (store, report) = load_embeddings(&embeddings, &views, LoadOptions::default()).unwrap();
    report.require_complete().unwrap();
    let cfg = ExperimentConfig {
        classifiers: vec![ClassifierKind::ZipF],
        ..ExperimentConfig::default()
    };
    let t = run_experiment(&m, &store, &cfg).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, target) in REPLICATION_TARGETS {
        let got = t.average("main", ClassifierKind::ZipF, k).unwrap();
        ok &= (got - target).abs() <= REPLICATION_TOL;
        parts.push(format!("K={k} {:.1} (target {:.1})", 100.0 * got, 100.0 * target));
    }
    pass_if(ok, format!("{} (tol ±{:.1}); baseline Tip numbers lack the text-logit blend", parts.join(", "), 100.0 * REPLICATION_TOL))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("zip_identity_at_init", zip_identity),
        ("zip_tip_equivalence", zip_tip_equivalence),
        ("gradient_oracle", gradient_oracle),
        ("sdpa_hand_check", sdpa_hand_check),
        ("synthetic_end_to_end", synthetic_end_to_end),
        ("multi_view_benefit", multi_view_benefit),
        ("connected_components_oracle", cc_oracle),
        ("harness_determinism", harness_determinism),
        ("training_flags_direction", training_flags_direction),
        ("replication_conditional", replication),
    ];
    // `cargo test --test acceptance -- <substring>` runs a subset.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if filter.as_deref().is_some_and(|s| !name.contains(s)) {
            continue;
        }
        let o = f();
        let tag = match o.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!("{tag} {name}: {}", o.detail);
    }
    println!("acceptance: {} criteria, {failed} failed", criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

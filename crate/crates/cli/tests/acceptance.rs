//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the criteria execute in
//! order and their lines stay readable. Exits non-zero if any criterion
//! fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use common::grad::{classifier_case, head_case, infonce_case, TOL};
use common::unit_rows;
use common::{gaussian_classes, infonce_oracle, lda_oracle, map_oracle, max_rel_diff, topk_oracle};
use t4v_core::classifier::{
    build_lda, build_random_normal, build_random_orthogonal, build_textual, fit_lda,
    ClassifierMatrix, DEFAULT_LDA_CAP,
};
use t4v_core::datastore::{
    decode_store, encode_store, generate_synthetic, FeatureStore, Split, SyntheticData,
    SyntheticSpec, HEADER_LEN,
};
use t4v_core::headnet::{init_params, HeadKind, HeadSpec};
use t4v_core::numkit::{gaussian_matrix, Matrix, RngState};
use t4v_core::objectives::{infonce_gathered, Batch, LogitScale};
use t4v_core::protocols::{
    average_precision, evaluate, mean_average_precision, topk_accuracy, zero_shot, Model, Protocol,
    ZeroShotOptions,
};
use t4v_core::trainer::{lr_at, run, Objective, RunLog, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Runs one criterion, checks its time budget and prints its line.
fn criterion(n: usize, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    criterion_after(n, budget, Duration::ZERO, f)
}

/// As [`criterion`], charging `spent` of shared set-up work to the budget.
fn criterion_after(
    n: usize,
    budget: Duration,
    spent: Duration,
    f: impl FnOnce() -> Outcome,
) -> bool {
    let start = Instant::now();
    let o = f();
    let elapsed = start.elapsed() + spent;
    let in_time = elapsed < budget;
    let pass = o.pass && in_time;
    println!(
        "criterion {n:>2}: {} ({}; {:.1} s of {} s budget{})",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { ", over budget" }
    );
    pass
}

fn gradients() -> Outcome {
    let families: [(&str, Box<dyn Fn(u64) -> f64>); 5] = [
        ("tap", Box::new(|s| head_case(HeadKind::Tap, 1, s))),
        ("t1d", Box::new(|s| head_case(HeadKind::T1d, 1, s))),
        ("ttrans", Box::new(|s| head_case(HeadKind::TTrans, 1, s))),
        ("learnable-ce", Box::new(classifier_case)),
        ("infonce", Box::new(infonce_case)),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, case) in &families {
        let worst = (0..20).map(case).fold(0.0f64, f64::max);
        pass &= worst < TOL;
        parts.push(format!("{name} {worst:.1e}"));
    }
    outcome(
        pass,
        format!("worst rel err over 20 each: {}", parts.join(", ")),
    )
}

fn gather_equivalence() -> Outcome {
    let mut rng = RngState::new(2);
    let mut worst = 0.0f64;
    let mut grids = 0;
    for m in [1usize, 2, 4] {
        for n in [1usize, 2, 4, 8] {
            if m * n > 32 {
                continue;
            }
            grids += 1;
            let d = 8;
            let v = unit_rows(m * n, d, &mut rng);
            let t = unit_rows(m * n, d, &mut rng);
            let scale = LogitScale {
                log_scale: rng.uniform() * 3.0,
                clamp_max: 100.0,
            };
            let shards: Vec<Batch> = (0..m)
                .map(|i| {
                    let idx: Vec<usize> = (i * n..(i + 1) * n).collect();
                    Batch {
                        video_embeddings: v.select_rows(&idx),
                        labels: idx.clone(),
                        paired_text_embeddings: Some(t.select_rows(&idx)),
                    }
                })
                .collect();
            let whole = vec![Batch {
                video_embeddings: v.clone(),
                labels: (0..m * n).collect(),
                paired_text_embeddings: Some(t.clone()),
            }];
            let g = infonce_gathered(&shards, &scale).unwrap();
            let single = infonce_gathered(&whole, &scale).unwrap();
            let oracle = infonce_oracle(&v, &t, scale.log_scale);
            let (gr, sr) = (g.reduced(), single.reduced());
            for (loss, video, text, ls) in [
                (single.mean_loss(), &sr.video, &sr.text, sr.log_scale),
                (oracle.loss, &oracle.video, &oracle.text, oracle.log_scale),
            ] {
                worst = worst
                    .max((g.mean_loss() - loss).abs())
                    .max(gr.video.sub(video).max_abs())
                    .max(gr.text.sub(text).max_abs())
                    .max((gr.log_scale - ls).abs());
            }
        }
    }
    outcome(
        worst < 1e-9,
        format!("{grids} (M,N) cells, max abs diff {worst:.1e}"),
    )
}

fn synthetic(
    classes: usize,
    noise: f64,
    text_noise: f64,
    seed: u64,
) -> (SyntheticSpec, SyntheticData) {
    let mut spec = SyntheticSpec::with_even_groups(classes, 2);
    spec.noise_std = noise;
    spec.text_noise_std = text_noise;
    spec.seed = seed;
    let data = generate_synthetic(&spec).unwrap();
    (spec, data)
}

fn frozen_contract() -> Outcome {
    let (spec, data) = synthetic(8, 0.5, 0.0, 3);
    let w = build_textual(&data.text, &spec.class_names()).unwrap();
    let head = HeadSpec::new(HeadKind::T1d, spec.frames, spec.dim);
    let cfg = TrainConfig {
        epochs: 30,
        warmup_epochs: 5,
        batch_size: 32,
        base_lr: 1e-3,
        min_lr: 1e-4,
        temperature: 10.0,
        ..TrainConfig::default()
    };
    let frozen = run(&data.train, &w, &head, &cfg).unwrap();
    let learnable = run(
        &data.train,
        &w,
        &head,
        &TrainConfig {
            objective: Objective::LearnableCe,
            ..cfg
        },
    )
    .unwrap();
    let kept = frozen.log.classifier_digest_before == frozen.log.classifier_digest_after
        && frozen.classifier.digest() == w.digest();
    let moved = learnable.log.classifier_digest_before != learnable.log.classifier_digest_after;
    outcome(
        kept && moved,
        format!("frozen digest unchanged: {kept}, learnable digest changed: {moved}"),
    )
}

fn lda_oracle_check() -> Outcome {
    let mut rng = RngState::new(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let c = 2 + rng.below(7);
        let d = 4 + rng.below(29);
        let store = gaussian_classes(c, d, d + 5 + rng.below(10), &mut rng);
        let fit = fit_lda(&store, usize::MAX).unwrap();
        worst = worst.max(max_rel_diff(&fit.classifier.weights, &lda_oracle(&store)));
    }
    let hand = FeatureStore::new(
        1,
        2,
        vec![0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 0.0, 0.0],
        vec![0, 0, 1, 1],
        Split::Train,
        vec!["a".into(), "b".into()],
    )
    .unwrap();
    let hand_err = build_lda(&hand, DEFAULT_LDA_CAP)
        .unwrap()
        .weights
        .sub(&Matrix::identity(2))
        .max_abs();
    outcome(
        worst < 1e-8 && hand_err < 1e-12,
        format!("50 datasets, worst rel err {worst:.1e}; hand example err {hand_err:.1e}"),
    )
}

const CLASSES: usize = 16;
/// Frame noise giving nearest-prototype test accuracy near 0.9.
const FRAME_NOISE: f64 = 0.6;

fn head_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 30,
        warmup_epochs: 5,
        base_lr: 1e-4,
        min_lr: 1e-5,
        batch_size: 32,
        temperature: 10.0,
        seed,
        ..TrainConfig::default()
    }
}

fn test_top1(spec: &HeadSpec, out: &t4v_core::trainer::TrainOutput, test: &FeatureStore) -> f64 {
    let model = Model::new(spec, &out.head, &out.classifier);
    evaluate(&model, test, Protocol::General).unwrap().top1
}

struct SeedResult {
    nearest_prototype: f64,
    top1: [f64; 4],
    logs: Vec<RunLog>,
}

fn classifier_runs(seed: u64) -> SeedResult {
    let (spec, data) = synthetic(CLASSES, FRAME_NOISE, 0.0, seed);
    let names = spec.class_names();
    let d = spec.dim;
    let mut rng = RngState::new(1000 + seed);
    let named = |w: ClassifierMatrix| w.with_class_names(names.clone()).unwrap();
    let classifiers = [
        build_textual(&data.text, &names).unwrap(),
        named(build_lda(&data.train, DEFAULT_LDA_CAP).unwrap()),
        named(build_random_orthogonal(d, CLASSES, &mut rng).unwrap()),
        named(build_random_normal(d, CLASSES, &mut rng).unwrap()),
    ];
    let tap = HeadSpec::new(HeadKind::Tap, spec.frames, d);
    let tap_params = init_params(&tap, &mut rng).unwrap();
    let nearest_prototype = evaluate(
        &Model::new(&tap, &tap_params, &classifiers[0]),
        &data.test,
        Protocol::General,
    )
    .unwrap()
    .top1;
    let head = HeadSpec::new(HeadKind::TTrans, spec.frames, d);
    let mut top1 = [0.0; 4];
    let mut logs = Vec::new();
    for (i, w) in classifiers.iter().enumerate() {
        let out = run(&data.train, w, &head, &head_config(seed)).unwrap();
        top1[i] = test_top1(&head, &out, &data.test);
        logs.push(out.log);
    }
    SeedResult {
        nearest_prototype,
        top1,
        logs,
    }
}

/// `a ≈ b` for the two random classifiers: their gap is under half the
/// margin separating LDA from the better of them.
fn random_pair_close(lda: f64, o: f64, n: f64) -> bool {
    (o - n).abs() < (lda - o.max(n)) / 2.0
}

fn ordering(results: &[SeedResult]) -> Outcome {
    let mut good = 0;
    let mut parts = Vec::new();
    for (seed, r) in results.iter().enumerate() {
        let [t, l, o, n] = r.top1;
        let ok = t >= l && l > o.max(n) && random_pair_close(l, o, n) && t - n >= 0.10;
        good += usize::from(ok);
        parts.push(format!(
            "seed {seed} np {:.3} T {t:.3} L {l:.3} O {o:.3} N {n:.3} {}",
            r.nearest_prototype,
            if ok { "ok" } else { "no" }
        ));
    }
    outcome(
        good * 2 > results.len(),
        format!("{good}/3 seeds; {}", parts.join("; ")),
    )
}

fn convergence(results: &[SeedResult]) -> Outcome {
    let mut all = true;
    let mut parts = Vec::new();
    for (seed, r) in results.iter().enumerate() {
        let textual = r.logs[0].epochs_to_loss(0.5);
        let normal = r.logs[3].epochs_to_loss(0.5);
        // a run that never reaches the threshold is slower than any that does
        let ok = match (textual, normal) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            _ => false,
        };
        all &= ok;
        let show = |e: Option<usize>| e.map_or("never".to_string(), |e| e.to_string());
        parts.push(format!(
            "seed {seed} textual {} normal {}",
            show(textual),
            show(normal)
        ));
    }
    outcome(all, format!("epochs to loss 0.5: {}", parts.join("; ")))
}

/// Text embeddings are perturbed copies of the prototypes, so that the
/// visual head has a gap to close as labelled data grows.
const FEWSHOT_TEXT_NOISE: f64 = 0.15;
const FEWSHOT_DRAWS: u64 = 3;

fn fewshot_ordering() -> Outcome {
    let seed = 0;
    let (spec, data) = synthetic(CLASSES, FRAME_NOISE, FEWSHOT_TEXT_NOISE, seed);
    let w = build_textual(&data.text, &spec.class_names()).unwrap();
    let head = HeadSpec::new(HeadKind::TTrans, spec.frames, spec.dim);
    let init = init_params(&head, &mut RngState::new(seed).fork(2)).unwrap();
    let zero = zero_shot(
        &ZeroShotOptions {
            half: false,
            ..ZeroShotOptions::default()
        },
        &data.test,
        &w,
        &head,
        &init,
        &mut RngState::new(seed),
    )
    .unwrap();
    // K-shot accuracy is averaged over independent support draws.
    let mut acc = vec![zero.top1];
    for (shots, draws) in [
        (Some(1), FEWSHOT_DRAWS),
        (Some(2), FEWSHOT_DRAWS),
        (None, 1),
    ] {
        let mean = (0..draws)
            .map(|draw| {
                let cfg = TrainConfig {
                    shots,
                    ..head_config(seed + draw)
                };
                let out = run(&data.train, &w, &head, &cfg).unwrap();
                test_top1(&head, &out, &data.test)
            })
            .sum::<f64>()
            / draws as f64;
        acc.push(mean);
    }
    let monotone = acc.windows(2).all(|p| p[1] >= p[0]);
    let zero_path = zero.protocol == Protocol::ZeroShotFull;
    outcome(
        monotone && zero_path,
        format!(
            "K=0 {:.3} (zero-shot protocol), K=1 {:.3}, K=2 {:.3} (mean of {FEWSHOT_DRAWS} draws), All {:.3}",
            acc[0], acc[1], acc[2], acc[3]
        ),
    )
}

fn zero_shot_determinism() -> Outcome {
    let (spec, data) = synthetic(CLASSES, FRAME_NOISE, 0.0, 7);
    let w = build_textual(&data.text, &spec.class_names()).unwrap();
    let head = HeadSpec::new(HeadKind::T1d, spec.frames, spec.dim);
    let params = init_params(&head, &mut RngState::new(7)).unwrap();
    let go = || {
        zero_shot(
            &ZeroShotOptions::default(),
            &data.test,
            &w,
            &head,
            &params,
            &mut RngState::new(42),
        )
        .unwrap()
    };
    let (a, b) = (go(), go());
    let same = a.top1.to_bits() == b.top1.to_bits()
        && a.top1_std.map(f64::to_bits) == b.top1_std.map(f64::to_bits)
        && a.subsets == b.subsets;
    let shape = a.subsets.len() == 10 && a.subsets.iter().all(|s| s.len() == CLASSES / 2);
    let n = a.per_repeat_top1.len() as f64;
    let mean = a.per_repeat_top1.iter().sum::<f64>() / n;
    let std = (a
        .per_repeat_top1
        .iter()
        .map(|x| (x - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let consistent = a.per_repeat_top1.len() == 10
        && (mean - a.top1).abs() < 1e-12
        && a.top1_std.is_some_and(|s| (s - std).abs() < 1e-12);
    outcome(
        same && shape && consistent,
        format!(
            "mean {:.4} std {:.4} over {} subsets of {}; identical across invocations: {same}",
            a.top1,
            a.top1_std.unwrap_or(f64::NAN),
            a.subsets.len(),
            CLASSES / 2
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = RngState::new(11);
    let mut topk_mismatch = 0;
    let mut map_worst = 0.0f64;
    for i in 0..1000 {
        let (n, c) = (1 + rng.below(20), 1 + rng.below(10));
        let scores = if i % 2 == 0 {
            let mut s = Matrix::zeros(n, c);
            s.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = rng.below(4) as f64);
            s
        } else {
            gaussian_matrix(n, c, &mut rng).unwrap()
        };
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        for k in 1..=c {
            if topk_accuracy(&scores, &labels, k).unwrap() != topk_oracle(&scores, &labels, k) {
                topk_mismatch += 1;
            }
        }
        let got = mean_average_precision(&scores, &labels).unwrap().value;
        map_worst = map_worst.max((got - map_oracle(&scores, &labels).unwrap()).abs());
    }
    let ap = average_precision(&[true, false, true]).unwrap();
    let ap_ok = (ap - 5.0 / 6.0).abs() < 1e-15;
    outcome(
        topk_mismatch == 0 && map_worst < 1e-12 && ap_ok,
        format!(
            "1000 matrices, topk mismatches {topk_mismatch}, mAP max diff {map_worst:.1e}, AP([1,0,1]) = {ap:.6}"
        ),
    )
}

fn format_robustness() -> Outcome {
    let mut rng = RngState::new(10);
    let mut exact = 0;
    for _ in 0..100 {
        let n = rng.below(10);
        let (t, d) = (1 + rng.below(4), 1 + rng.below(8));
        let features = (0..n * t * d)
            .map(|_| (rng.standard_normal() * 100.0) as f32 as f64)
            .collect();
        let labels = (0..n).map(|_| rng.below(3)).collect();
        let names = (0..3).map(|k| format!("c{k}")).collect();
        let store = FeatureStore::new(t, d, features, labels, Split::Train, names).unwrap();
        let bytes = encode_store(&store).unwrap();
        let back = decode_store(&bytes).unwrap();
        let bits = |s: &FeatureStore| s.payload().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if back.labels() == store.labels()
            && bits(&back) == bits(&store)
            && encode_store(&back).unwrap() == bytes
        {
            exact += 1;
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let store = FeatureStore::new(
        2,
        3,
        (0..3 * 6).map(|v| v as f64 * 0.5 - 2.0).collect(),
        vec![0, 1, 0],
        Split::Test,
        vec!["a".into(), "b".into()],
    )
    .unwrap();
    let clean = encode_store(&store).unwrap();
    let path = dir.path().join("s.t4v");
    let payload = HEADER_LEN + 4 * store.len()..clean.len() - 4;
    let positions = payload.len();
    let mut caught = 0;
    for i in payload {
        let mut bad = clean.clone();
        bad[i] ^= 1 << rng.below(8);
        std::fs::write(&path, &bad).unwrap();
        let status = Command::new(env!("CARGO_BIN_EXE_t4v"))
            .arg("inspect")
            .arg(&path)
            .output()
            .unwrap();
        let stderr = String::from_utf8_lossy(&status.stderr);
        if status.status.code() == Some(2) && stderr.contains("CRC") {
            caught += 1;
        }
    }
    outcome(
        exact == 100 && caught == positions,
        format!("{exact}/100 bit-exact round trips; {caught}/{positions} corrupted payload bytes exit 2"),
    )
}

fn lr_schedule() -> Outcome {
    let mut rng = RngState::new(12);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let epochs = 2 + rng.below(60);
        let warmup = 1 + rng.below(epochs - 1);
        // even steps per epoch put the cosine midpoint on a whole step
        let spe = 2 * (1 + rng.below(50));
        let base = 10f64.powf(-1.0 - 4.0 * rng.uniform());
        let cfg = TrainConfig {
            epochs,
            warmup_epochs: warmup,
            base_lr: base,
            min_lr: base * rng.uniform(),
            ..TrainConfig::default()
        };
        let (warm, total) = (warmup * spe, epochs * spe);
        let mid = warm + (total - warm) / 2;
        worst = worst
            .max((lr_at(&cfg, warm, spe) - cfg.base_lr).abs())
            .max((lr_at(&cfg, total, spe) - cfg.min_lr).abs())
            .max((lr_at(&cfg, mid, spe) - (cfg.base_lr + cfg.min_lr) / 2.0).abs());
    }
    outcome(
        worst < 1e-12,
        format!("20 configs, max deviation {worst:.1e}"),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = vec![
        criterion(1, secs(60), gradients),
        criterion(2, secs(10), gather_equivalence),
        criterion(3, secs(120), frozen_contract),
        criterion(4, secs(30), lda_oracle_check),
    ];

    let start = Instant::now();
    let runs: Vec<SeedResult> = (0..3).map(classifier_runs).collect();
    let shared = start.elapsed();
    // criterion 6 reuses criterion 5's training runs
    results.push(criterion_after(5, secs(600), shared, || ordering(&runs)));
    results.push(criterion_after(6, secs(600), shared, || convergence(&runs)));

    results.push(criterion(7, secs(300), fewshot_ordering));
    results.push(criterion(8, secs(60), zero_shot_determinism));
    results.push(criterion(9, secs(10), metric_oracles));
    results.push(criterion(10, secs(10), format_robustness));
    results.push(criterion(11, secs(1), lr_schedule));

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}

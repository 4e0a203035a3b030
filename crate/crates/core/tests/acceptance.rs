//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints its own PASS/FAIL line.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aigi_core::classifier::{argmax, classify, classify_binary, classify_embeddings, predictions_table};
use aigi_core::data::{batch_plan, load_manifest, ImageArray, ImageLoader, MissingFilePolicy, Split};
use aigi_core::dire::{compute_dire, dire_score, roc_auc, toy_oracle, IdentityOracle};
use aigi_core::encoder::{BackboneSpec, EmbeddingVector, EncoderBundle};
use aigi_core::eval::{
    accuracy_by_class, binary_rollup, detection_counts, per_class_metrics, render_report, ConfusionMatrix, EvalReport,
    ReportFormat,
};
use aigi_core::finetune::{batch_loss, fit, loss_and_gradients, symmetric_loss, Targets, TrainConfig};
use aigi_core::fixtures::{noise_image, toy_registry, write_toy_dataset};
use aigi_core::registry::{builtin_registry, Registry, Verdict};
use aigi_core::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Reference confusion matrix; columns in this order, rows likewise.
const REF_ORDER: [&str; 11] = [
    "ADM", "DDPM", "DPjG", "DSG", "IDDPM", "LDM", "PjG", "SG", "PG", "PNDM", "Real",
];
const REF_CONFUSION: [[u64; 11]; 11] = [
    [718, 2, 0, 0, 251, 0, 0, 0, 0, 0, 7],
    [0, 1032, 2, 0, 0, 0, 0, 0, 0, 0, 3],
    [0, 0, 821, 0, 0, 2, 151, 0, 3, 0, 0],
    [0, 0, 0, 1008, 0, 0, 0, 0, 1, 0, 0],
    [94, 7, 0, 0, 884, 0, 1, 0, 0, 0, 0],
    [0, 0, 2, 0, 0, 953, 0, 0, 5, 1, 1],
    [0, 0, 227, 1, 0, 0, 766, 1, 5, 0, 0],
    [0, 0, 1, 3, 0, 0, 1, 1034, 8, 0, 1],
    [0, 0, 4, 1, 0, 0, 3, 5, 980, 0, 0],
    [0, 0, 1, 1, 0, 2, 0, 0, 0, 1006, 0],
    [13, 25, 1, 0, 4, 0, 0, 0, 0, 0, 957],
];
// (precision, recall, f1) per row of REF_CONFUSION, as printed.
const REF_METRICS: [(f64, f64, f64); 11] = [
    (0.870, 0.734, 0.796),
    (0.968, 0.995, 0.981),
    (0.775, 0.840, 0.806),
    (0.994, 0.999, 0.997),
    (0.776, 0.897, 0.832),
    (0.996, 0.991, 0.993),
    (0.831, 0.766, 0.797),
    (0.994, 0.987, 0.990),
    (0.978, 0.987, 0.982),
    (0.999, 0.996, 0.998),
    (0.988, 0.957, 0.972),
];
// (abbreviation, total images, correct real/fake verdicts, printed accuracy).
const REF_DETECTION: [(&str, u64, u64, f64); 11] = [
    ("ADM", 978, 971, 0.993),
    ("DDPM", 1037, 1034, 0.997),
    ("DPjG", 977, 977, 1.0),
    ("DSG", 1009, 1009, 1.0),
    ("IDDPM", 986, 986, 1.0),
    ("LDM", 962, 961, 0.999),
    ("PNDM", 1010, 1010, 1.0),
    ("PG", 993, 993, 1.0),
    ("PjG", 1000, 1000, 1.0),
    ("Real", 1000, 957, 0.957),
    ("SG", 1048, 1047, 0.999),
];

/// Reference matrix permuted into registry order.
fn reference_matrix(reg: &Registry) -> ConfusionMatrix {
    let pos = |abbr: &str| REF_ORDER.iter().position(|a| *a == abbr).unwrap();
    let order: Vec<usize> = reg.classes().iter().map(|c| pos(&c.abbreviation)).collect();
    let rows: Vec<Vec<u64>> = order
        .iter()
        .map(|&t| order.iter().map(|&p| REF_CONFUSION[t][p]).collect())
        .collect();
    ConfusionMatrix::from_rows(&rows).unwrap()
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let reg = builtin_registry();
    let matrix = reference_matrix(&reg);
    let metrics = per_class_metrics(&matrix);
    let mut worst: f64 = 0.0;
    for (k, class) in reg.classes().iter().enumerate() {
        let r = REF_ORDER.iter().position(|a| *a == class.abbreviation).unwrap();
        let (p, rc, f) = REF_METRICS[r];
        let got = metrics[k];
        for (name, want, have) in [
            ("precision", p, got.precision),
            ("recall", rc, got.recall),
            ("f1", f, got.f1),
        ] {
            let have = have.ok_or_else(|| format!("{} {name} undefined", class.abbreviation))?;
            worst = worst.max((have - want).abs());
            ensure((have - want).abs() <= 0.0005, || {
                format!("{} {name}: {have:.5} vs {want}", class.abbreviation)
            })?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("33 values, max deviation {worst:.5}, {elapsed:?}"))
}

fn accuracy_oracle() -> Outcome {
    let start = Instant::now();
    let reg = builtin_registry();
    // Matrix with the correct count on the diagonal and the remainder
    // spread into the first other class.
    let k = reg.len();
    let mut rows = vec![vec![0u64; k]; k];
    for &(abbr, total, correct, _) in &REF_DETECTION {
        let i = reg.by_abbreviation(abbr).unwrap().class_id;
        rows[i][i] = correct;
        rows[i][(i + 1) % k] = total - correct;
    }
    let acc = accuracy_by_class(&ConfusionMatrix::from_rows(&rows).unwrap());
    let mut worst: f64 = 0.0;
    for &(abbr, _, _, want) in &REF_DETECTION {
        let have = acc[reg.by_abbreviation(abbr).unwrap().class_id].unwrap();
        worst = worst.max((have - want).abs());
        ensure((have - want).abs() <= 0.001, || format!("{abbr}: {have:.4} vs {want}"))?;
    }
    // The same counts fall out of the reference confusion matrix as
    // per-class real/fake correctness.
    let matrix = reference_matrix(&reg);
    let detected = detection_counts(&matrix, &reg).unwrap();
    let report = EvalReport::from_confusion("CLIP", &reg, matrix.clone()).unwrap();
    let det_acc = report.detection_accuracy();
    for &(abbr, total, correct, want) in &REF_DETECTION {
        let i = reg.by_abbreviation(abbr).unwrap().class_id;
        ensure(detected[i] == correct && matrix.row_total(i) == total, || {
            format!(
                "{abbr}: matrix gives {}/{} vs {correct}/{total}",
                detected[i],
                matrix.row_total(i)
            )
        })?;
        ensure((det_acc[i].unwrap() - want).abs() <= 0.001, || {
            format!("{abbr} report accuracy")
        })?;
    }
    let rollup = binary_rollup(&matrix, &reg).unwrap();
    ensure(rollup.get(Verdict::Real, Verdict::Fake) == 43, || {
        "real images called fake".into()
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("11 classes, max deviation {worst:.5}, {elapsed:?}"))
}

/// Straightforward softmax cross-entropy, both directions.
#[allow(clippy::needless_range_loop)]
fn naive_symmetric_loss(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut rows = 0.0;
    let mut cols = 0.0;
    for i in 0..n {
        let z: f64 = m[i].iter().map(|v| v.exp()).sum();
        rows += -(m[i][i].exp() / z).ln();
        let z: f64 = (0..n).map(|r| m[r][i].exp()).sum();
        cols += -(m[i][i].exp() / z).ln();
    }
    (rows / n as f64 + cols / n as f64) / 2.0
}

fn loss_identities() -> Outcome {
    for n in [2usize, 4, 16] {
        for v in [0.0, 3.7, -12.0] {
            let l = symmetric_loss(&Matrix::from_vec(n, n, vec![v; n * n]).unwrap()).unwrap();
            let want = (n as f64).ln();
            ensure((l - want).abs() <= 1e-9, || {
                format!("N={n} value {v}: {l} vs ln N {want}")
            })?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = rng.random_range(1..=12);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-8.0..8.0)).collect())
            .collect();
        let got = symmetric_loss(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let want = naive_symmetric_loss(&rows);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-10, || {
            format!("case {case} (N={n}): {got} vs {want}")
        })?;
    }
    Ok(format!(
        "ln N for N in 2, 4, 16; 100 random matrices, max deviation {worst:.2e}"
    ))
}

fn small_spec() -> BackboneSpec {
    BackboneSpec {
        resolution: 16,
        channels: [4, 6, 8],
        text_width: 8,
        embed_dim: 8,
        ..Default::default()
    }
}

fn random_images(n: usize, res: usize, rng: &mut ChaCha8Rng) -> Vec<ImageArray> {
    (0..n)
        .map(|_| {
            let v = (0..3 * res * res).map(|_| rng.random_range(-1.0..1.0)).collect();
            ImageArray::new(3, res, res, v).unwrap()
        })
        .collect()
}

fn gradient_check() -> Outcome {
    let reg = builtin_registry();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let bundle = EncoderBundle::tiny(small_spec(), &reg, 11).unwrap();
    let images = random_images(4, 16, &mut rng);
    let ids = [0usize, 3, 7, 10];
    let targets = Targets::Diagonal;
    let (_, grads) = loss_and_gradients(&bundle, &images, &ids, &reg, &targets).unwrap();

    let h = 1e-6;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut groups = Vec::new();
    for (pi, param) in bundle.params().params().iter().enumerate() {
        let live: Vec<usize> = (0..param.values.len())
            .filter(|&i| grads.get(pi)[i].abs() > 1e-5)
            .collect();
        if live.is_empty() {
            continue;
        }
        groups.push(param.name.clone());
        for _ in 0..3.min(live.len()) {
            let i = live[rng.random_range(0..live.len())];
            let mut plus = bundle.clone();
            plus.params_mut().params_mut()[pi].values[i] += h;
            let mut minus = bundle.clone();
            minus.params_mut().params_mut()[pi].values[i] -= h;
            let numeric = (batch_loss(&plus, &images, &ids, &reg, &targets).unwrap()
                - batch_loss(&minus, &images, &ids, &reg, &targets).unwrap())
                / (2.0 * h);
            let analytic = grads.get(pi)[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            worst = worst.max(rel);
            ensure(rel < 1e-4, || {
                format!("{}[{i}]: analytic {analytic:e}, numeric {numeric:e}", param.name)
            })?;
            checked += 1;
        }
    }
    ensure(checked >= 20, || format!("only {checked} parameters sampled"))?;
    Ok(format!(
        "{checked} parameters over {} tensors, max relative error {worst:.2e}",
        groups.len()
    ))
}

fn toy_fine_tune() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let paths = write_toy_dataset(dir.path(), 100, 50, 32, 7).map_err(|e| e.to_string())?;
    let reg = toy_registry();
    let manifest = load_manifest(&paths.manifest, &reg, MissingFilePolicy::Fail).map_err(|e| e.to_string())?;
    let spec = BackboneSpec::default();
    let loader = ImageLoader::new(spec.resolution, spec.normalization);
    let bundle = EncoderBundle::tiny(spec, &reg, 0).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        learning_rate: 1e-3,
        ..Default::default()
    };
    let out = fit(&config, &manifest, &reg, bundle, &loader, |_| Ok(())).map_err(|e| e.to_string())?;

    let test = manifest.split_indices(Split::Test);
    let batch = loader.load_batch(&manifest, &test, 0).map_err(|e| e.to_string())?;
    let preds = classify(&out.bundle, &reg, &batch.images).map_err(|e| e.to_string())?;
    let verdicts = classify_binary(&out.bundle, &reg, &batch.images).map_err(|e| e.to_string())?;
    let n = batch.class_ids.len() as f64;
    let multi = preds
        .iter()
        .zip(&batch.class_ids)
        .filter(|(p, c)| p.class_id == **c)
        .count() as f64
        / n;
    let binary = verdicts
        .iter()
        .zip(&batch.class_ids)
        .filter(|(v, c)| **v == reg.verdict(**c).unwrap())
        .count() as f64
        / n;
    let elapsed = start.elapsed();
    let detail = format!(
        "{} train / {} test, multi-class {multi:.3}, real/fake {binary:.3}, {:.1}s",
        manifest.split_indices(Split::Train).len(),
        test.len(),
        elapsed.as_secs_f64()
    );
    ensure(
        test.len() == 150 && manifest.split_indices(Split::Train).len() == 300,
        || detail.clone(),
    )?;
    ensure(multi >= 0.95 && binary >= 0.98, || detail.clone())?;
    ensure(elapsed < Duration::from_secs(300), || detail.clone())?;
    Ok(detail)
}

fn dire_hypothesis() -> Outcome {
    let oracle = toy_oracle(20, 3).unwrap();
    let samples = oracle.samples(200, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let outside: Vec<ImageArray> = (0..200).map(|_| noise_image(32, &mut rng)).collect();
    let score = |x: &ImageArray| dire_score(&compute_dire(x, &oracle).unwrap());
    let s_in: Vec<f64> = samples.iter().map(score).collect();
    let s_out: Vec<f64> = outside.iter().map(score).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m_in, m_out) = (mean(&s_in), mean(&s_out));
    ensure(m_in < m_out, || format!("in-process mean {m_in} not below {m_out}"))?;
    let scores: Vec<f64> = s_in.iter().chain(&s_out).copied().collect();
    let labels: Vec<Verdict> = std::iter::repeat_n(Verdict::Fake, 200)
        .chain(std::iter::repeat_n(Verdict::Real, 200))
        .collect();
    let auc = roc_auc(&scores, &labels).unwrap();
    ensure(auc >= 0.9, || format!("AUC {auc}"))?;

    for i in 0..1000 {
        let x = &random_images(1, 32, &mut rng)[0];
        let map = compute_dire(x, &oracle).unwrap();
        ensure(map.values().iter().all(|v| *v >= 0.0 && v.is_finite()), || {
            format!("negative entry on input {i}")
        })?;
        let zero = compute_dire(x, &IdentityOracle).unwrap();
        ensure(zero.values().iter().all(|v| *v == 0.0), || {
            format!("identity map nonzero on input {i}")
        })?;
    }
    Ok(format!(
        "mean {m_in:.4} vs {m_out:.4}, AUC {auc:.3}, 1000 inputs nonnegative and identity-zero"
    ))
}

fn run_pipeline(root: &std::path::Path) -> (Vec<Vec<usize>>, Vec<u64>, String, String) {
    let paths = write_toy_dataset(root, 8, 4, 16, 5).unwrap();
    let reg = toy_registry();
    let manifest = load_manifest(&paths.manifest, &reg, MissingFilePolicy::Fail).unwrap();
    let plan = batch_plan(&manifest, Split::Train, 5, 9, 1).unwrap();
    let loader = ImageLoader::new(16, Default::default());
    let config = TrainConfig {
        learning_rate: 1e-3,
        epochs: 2,
        batch_size: 5,
        seed: 9,
        ..Default::default()
    };
    let bundle = EncoderBundle::tiny(small_spec(), &reg, 4).unwrap();
    let out = fit(&config, &manifest, &reg, bundle, &loader, |_| Ok(())).unwrap();
    let losses = out.history.iter().map(|r| r.loss.to_bits()).collect();
    let test = manifest.split_indices(Split::Test);
    let batch = loader.load_batch(&manifest, &test, 0).unwrap();
    let preds = classify(&out.bundle, &reg, &batch.images).unwrap();
    let names: Vec<String> = test
        .iter()
        .map(|&i| manifest.records[i].path.to_string_lossy().into_owned())
        .collect();
    let prediction_file = predictions_table(&names, &preds, &reg).unwrap().to_text().unwrap();
    let truths: Vec<usize> = batch.class_ids.clone();
    let ids: Vec<usize> = preds.iter().map(|p| p.class_id).collect();
    let report = EvalReport::from_predictions("CLIP", &reg, &truths, &ids).unwrap();
    let rendered =
        render_report(&report, ReportFormat::Csv).unwrap() + &render_report(&report, ReportFormat::Markdown).unwrap();
    (plan, losses, prediction_file, rendered)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_pipeline(a.path());
    let second = run_pipeline(b.path());
    ensure(first.0 == second.0, || "batch order differs".into())?;
    ensure(first.1 == second.1, || "training losses differ".into())?;
    ensure(first.2 == second.2, || "prediction files differ".into())?;
    ensure(first.3 == second.3, || "rendered reports differ".into())?;
    Ok(format!(
        "{} batches, {} losses, {} prediction bytes, {} report bytes identical",
        first.0.len(),
        first.1.len(),
        first.2.len(),
        first.3.len()
    ))
}

fn classifier_invariances() -> Outcome {
    let reg = builtin_registry();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bundle = EncoderBundle::tiny(small_spec(), &reg, 21).unwrap();
    let captions = bundle.embed_texts(&reg.prompts()).unwrap();
    for case in 0..100 {
        let img = &random_images(1, 16, &mut rng)[0];
        let raw = bundle.raw_image_features(img).unwrap();
        let base =
            classify_embeddings(&[bundle.project_image_features(&raw).unwrap()], &captions, &reg).unwrap()[0].clone();
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
        let rescaled =
            classify_embeddings(&[bundle.project_image_features(&scaled).unwrap()], &captions, &reg).unwrap();
        ensure(rescaled[0].class_id == base.class_id, || {
            format!("case {case}: rescaling by {c} changed the class")
        })?;

        let scale = rng.random_range(-5.0..100f64.ln());
        bundle.set_logit_scale(scale);
        let again = classify(&bundle, &reg, std::slice::from_ref(img)).unwrap();
        ensure(again[0].class_id == base.class_id, || {
            format!("case {case}: logit scale {scale} changed the class")
        })?;
        let probs = again[0].probabilities(bundle.logit_scale());
        ensure(argmax(&probs) == Some(base.class_id), || {
            format!("case {case}: softmax argmax differs")
        })?;
    }

    // Constructed ties.
    let dim = reg.len();
    let unit = |v: Vec<f64>| EmbeddingVector::from_raw(&v).unwrap();
    let basis: Vec<EmbeddingVector> = (0..dim)
        .map(|k| unit((0..dim).map(|j| (j == k) as u8 as f64).collect()))
        .collect();
    for (a, b) in [(0usize, 1usize), (2, 9), (4, 10), (5, 6)] {
        let mut v = vec![0.0; dim];
        v[a] = 1.0;
        v[b] = 1.0;
        let p = classify_embeddings(&[unit(v)], &basis, &reg).unwrap();
        ensure(p[0].class_id == a, || {
            format!("tie between {a} and {b} went to {}", p[0].class_id)
        })?;
    }
    let mut dup = basis.clone();
    dup[7] = dup[3].clone();
    let p = classify_embeddings(&[basis[3].clone()], &dup, &reg).unwrap();
    ensure(p[0].class_id == 3, || "duplicate caption tie".into())?;
    Ok("100 random cases stable under feature rescaling and logit scale; ties go to the lowest id".into())
}

type Check = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let checks: [Check; 8] = [
        ("1 metric oracle (precision/recall/F1)", metric_oracle),
        ("2 accuracy oracle (per-class counts)", accuracy_oracle),
        ("3 loss identities", loss_identities),
        ("4 gradient check", gradient_check),
        ("5 toy fine-tune", toy_fine_tune),
        ("6 reconstruction-error hypothesis", dire_hypothesis),
        ("7 determinism", determinism),
        ("8 classifier invariances", classifier_invariances),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(e.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {name}: {why}");
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

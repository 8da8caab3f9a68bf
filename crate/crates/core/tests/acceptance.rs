//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criterion 7 needs the TREC corpus and GloVe vectors; it runs only
//! when `HSM_TREC_TRAIN`, `HSM_TREC_TEST` and `HSM_GLOVE` point at them.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hsm::cli::{self, GradcheckArgs, Mode, RunConfig};
use hsm::encoder::{Dropout, EncoderKind};
use hsm::hsoftmax::{self, GradCheckOptions, HierSoftmaxParams, Stencil};
use hsm::metrics::{self, ConfusionMatrix, MacroAverage};
use hsm::{Matrix, TaxonomyTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed <= limit, format!("{:.2}s of {}s", elapsed.as_secs_f64(), limit.as_secs()))
}

fn random_tree(rng: &mut ChaCha8Rng) -> TaxonomyTree {
    let depth = rng.gen_range(1..=4);
    TaxonomyTree::random(rng, depth, 6, 0.6)
}

fn random_params(tree: &TaxonomyTree, d: usize, scale: f64, rng: &mut ChaCha8Rng) -> HierSoftmaxParams {
    let mut p = HierSoftmaxParams::zeros(tree, d);
    for m in p.matrices_mut() {
        m.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
    p
}

/// 1. Analytic head gradients and end-to-end encoder gradients against
/// central differences.
fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut head_worst: f64 = 0.0;
    let mut head_failed = 0;
    let opts = GradCheckOptions {
        step: 1e-3,
        tolerance: 1e-6,
        stencil: Stencil::Central4,
        inject_fault: false,
    };
    for seed in 1..=100 {
        let (tree, params, h, target) = cli::random_head_instance(seed);
        assert!(tree.max_depth() <= 4 && h.len() <= 8);
        assert!(tree.parents().iter().all(|&p| tree.fan_out(p) <= 6));
        let rep = hsoftmax::gradient_check_with(&params, &tree, &h, target, &opts).unwrap();
        head_worst = head_worst.max(rep.max_error);
        head_failed += usize::from(!rep.passed());
    }
    let mut enc_worst: f64 = 0.0;
    for seed in 1..=20 {
        let (mut model, ex) = cli::random_model_instance(seed);
        let dropout = if seed % 2 == 0 {
            Dropout::OFF
        } else {
            Dropout::training(0.5, seed)
        };
        enc_worst = enc_worst.max(model.max_gradient_error(&ex, dropout, Stencil::Central4, 2e-3).unwrap());
    }
    let (fast, time) = within(start.elapsed(), Duration::from_secs(60));
    verdict(
        head_failed == 0 && head_worst <= 1e-6 && enc_worst <= 1e-5 && fast,
        format!("head max rel err {head_worst:.2e} (100 instances), encoder max rel err {enc_worst:.2e} (20 instances), {time}"),
    )
}

/// Regular softmax layer over `[h; 1]`, written independently of the crate.
fn plain_softmax(w: &Matrix, h: &[f64], target: usize) -> (f64, Matrix, Vec<f64>, usize) {
    let d = h.len();
    let logits: Vec<f64> = (0..w.rows())
        .map(|j| (0..d).map(|c| w.get(j, c) * h[c]).sum::<f64>() + w.get(j, d))
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let probs: Vec<f64> = logits.iter().map(|l| (l - max).exp() / z).collect();
    let loss = -(logits[target] - max - z.ln());
    let mut dw = Matrix::zeros(w.rows(), d + 1);
    let mut dh = vec![0.0; d];
    for j in 0..w.rows() {
        let r = probs[j] - if j == target { 1.0 } else { 0.0 };
        for c in 0..d {
            dw.set(j, c, r * h[c]);
            dh[c] += r * w.get(j, c);
        }
        dw.set(j, d, r);
    }
    let mut best = 0;
    for j in 1..logits.len() {
        if logits[j] > logits[best] {
            best = j;
        }
    }
    (loss, dw, dh, best)
}

/// 2. On depth-1 taxonomies the hierarchical layer is a regular softmax.
fn flat_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut mismatched_predictions = 0;
    for _ in 0..100 {
        let tree = random_tree(&mut rng).flat_view();
        let d = rng.gen_range(1..=8);
        let params = random_params(&tree, d, 2.0, &mut rng);
        let h: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let class = rng.gen_range(0..tree.num_classes());
        let target = tree.leaves()[class];
        let w = params.weights(tree.root()).unwrap();
        let (loss, dw, dh, pred) = plain_softmax(w, &h, class);

        let (l, g) = hsoftmax::loss_and_gradients(&params, &tree, &h, target).unwrap();
        worst = worst.max((l - loss).abs());
        let gw = &g.d_weights[&tree.root()];
        for (a, b) in gw.as_slice().iter().zip(dw.as_slice()) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in g.d_hidden.iter().zip(&dh) {
            worst = worst.max((a - b).abs());
        }
        let p = hsoftmax::predict(&params, &tree, &h).unwrap();
        mismatched_predictions += usize::from(tree.leaf_index(p) != Some(pred));
    }
    let (fast, time) = within(start.elapsed(), Duration::from_secs(10));
    verdict(
        worst <= 1e-12 && mismatched_predictions == 0 && fast,
        format!("max abs diff {worst:.2e}, {mismatched_predictions} prediction mismatches over 100 instances, {time}"),
    )
}

/// 3. Leaf probabilities sum to one.
fn normalization() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let tree = random_tree(&mut rng);
        let d = rng.gen_range(1..=8);
        let params = random_params(&tree, d, 3.0, &mut rng);
        let h: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lp = hsoftmax::leaf_log_probs(&params, &tree, &h).unwrap();
        let total: f64 = lp.iter().map(|l| l.exp()).sum();
        worst = worst.max((total - 1.0).abs());
    }
    let (fast, time) = within(start.elapsed(), Duration::from_secs(10));
    verdict(worst <= 1e-9 && fast, format!("max |sum - 1| {worst:.2e} over 1000 instances, {time}"))
}

fn data_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/taxonomies").join(name)
}

/// 4. The hierarchy adds (P - 1)(h + 1) weights over a flat layer.
fn parameter_accounting() -> Outcome {
    let tree = TaxonomyTree::load(data_file("trec.tsv")).unwrap();
    let count = |t: &TaxonomyTree| -> usize {
        let p = HierSoftmaxParams::zeros(t, 150);
        p.matrices().iter().map(|m| m.rows() * m.cols()).sum()
    };
    let (hier, flat) = (count(&tree), count(&tree.flat_view()));
    let diff = hier - flat;
    verdict(
        tree.num_classes() == 50 && tree.num_parents() == 7 && diff == 906 && diff == (7 - 1) * 151,
        format!("C = {}, P = {}, hierarchical {hier} - flat {flat} = {diff}", tree.num_classes(), tree.num_parents()),
    )
}

/// 5. Metrics against a brute-force recount, and the macro-F1 witness.
fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c = rng.gen_range(2..=10);
        let mut truths = Vec::new();
        let mut preds = Vec::new();
        for t in 0..c {
            for p in 0..c {
                let n = if rng.gen_bool(0.3) { 0 } else { rng.gen_range(0..15) };
                for _ in 0..n {
                    truths.push(t);
                    preds.push(p);
                }
            }
        }
        if truths.is_empty() {
            truths.push(0);
            preds.push(0);
        }
        let r = metrics::evaluate(&truths, &preds, c).unwrap();

        let (mut f1, mut pr, mut re) = (0.0, 0.0, 0.0);
        for k in 0..c {
            let tp = truths.iter().zip(&preds).filter(|&(&t, &p)| t == k && p == k).count() as f64;
            let predicted = preds.iter().filter(|&&p| p == k).count() as f64;
            let actual = truths.iter().filter(|&&t| t == k).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            let f = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            f1 += f;
            pr += precision;
            re += recall;
        }
        let n = c as f64;
        let correct = truths.iter().zip(&preds).filter(|(t, p)| t == p).count() as f64;
        let acc = 100.0 * correct / truths.len() as f64;
        for (a, b) in [
            (r.macro_f1, 100.0 * f1 / n),
            (r.macro_precision, 100.0 * pr / n),
            (r.macro_recall, 100.0 * re / n),
            (r.micro_accuracy, acc),
        ] {
            worst = worst.max((a - b).abs());
        }
    }
    let w = metrics::not_harmonic_mean_witness();
    let r = metrics::report_from_matrix(&w, MacroAverage::AllClasses);
    let gap = (r.macro_f1 - metrics::harmonic_of_macros(&r)).abs();
    let expected = ConfusionMatrix::from_rows(&[vec![9, 1], vec![5, 5]]);
    verdict(
        worst <= 1e-9 && gap > 0.01 && w == expected,
        format!("max abs diff {worst:.2e} over 100 matrices, witness gap {gap:.3} points"),
    )
}

fn synthetic_config(out: PathBuf) -> RunConfig {
    RunConfig {
        synthetic: true,
        encoder: EncoderKind::Mean,
        mode: Mode::Both,
        seeds: (1..=5).collect(),
        out,
        ..RunConfig::default()
    }
}

/// 6. Both models separate the synthetic corpus.
fn synthetic_separation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let report = cli::cmd_compare(&synthetic_config(dir.path().to_path_buf())).unwrap();
    let (fast, time) = within(start.elapsed(), Duration::from_secs(120));
    let min = |v: &cli::VariantSummary| v.runs.iter().map(|r| r.test.micro_accuracy).fold(f64::INFINITY, f64::min);
    let (f, h) = (min(&report.flat), min(&report.hierarchical));
    verdict(
        f >= 95.0 && h >= 95.0 && fast,
        format!("lowest test accuracy over 5 seeds: flat {f:.3}%, hierarchical {h:.3}%, {time}"),
    )
}

/// 7. Directional comparison on TREC with GloVe vectors.
fn trec_direction() -> Outcome {
    let var = |k: &str| std::env::var_os(k).map(PathBuf::from);
    let (Some(train), Some(test), Some(glove)) = (var("HSM_TREC_TRAIN"), var("HSM_TREC_TEST"), var("HSM_GLOVE")) else {
        return Outcome::Skip("set HSM_TREC_TRAIN, HSM_TREC_TEST and HSM_GLOVE to run (slow)".into());
    };
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        train: Some(train),
        test: Some(test),
        taxonomy: Some(data_file("trec.tsv")),
        embeddings: Some(glove),
        encoder: EncoderKind::Lstm,
        h_dim: vec![150],
        bidirectional: true,
        seeds: vec![1, 2, 3],
        out: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let start = Instant::now();
    let report = match cli::cmd_compare(&cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let (fast, time) = within(start.elapsed(), Duration::from_secs(7200));
    let (f, h) = (report.flat.mean.macro_f1.0, report.hierarchical.mean.macro_f1.0);
    verdict(
        h >= f - 0.5 && fast,
        format!("mean macro-F1 flat {f:.3}, hierarchical {h:.3}, hierarchical ahead: {}, {time}", h > f),
    )
}

/// 8. Repeated compare runs write byte-identical reports.
fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let start = Instant::now();
    cli::cmd_compare(&synthetic_config(a.path().to_path_buf())).unwrap();
    cli::cmd_compare(&synthetic_config(b.path().to_path_buf())).unwrap();
    let (fast, time) = within(start.elapsed() / 2, Duration::from_secs(120));
    let same = ["report.txt", "report.json"]
        .iter()
        .all(|f| std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap());
    verdict(same && fast, format!("report.txt and report.json identical: {same}, {time} per run"))
}

fn main() -> ExitCode {
    // The gradcheck command is exercised as a whole as well.
    assert!(cli::cmd_gradcheck(&GradcheckArgs::default()).unwrap().passed);

    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient fidelity", gradient_fidelity),
        ("flat equivalence", flat_equivalence),
        ("normalization", normalization),
        ("parameter accounting", parameter_accounting),
        ("metric oracle", metric_oracle),
        ("synthetic separation", synthetic_separation),
        ("TREC direction", trec_direction),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} [{}] {name}: {detail}", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

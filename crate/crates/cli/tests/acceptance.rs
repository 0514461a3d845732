//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass criterion ids (`A3 A7`) as
//! arguments to run a subset.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coatnext::attention::{self, AttentionKind, CbamParams, EcaParams, SeParams};
use coatnext::blocks::{
    self, grn_response, BlockConfig, BlockKind, BlockParams, BlockSpec, ConvNeXtV2BlockParams, GrnDenominator,
};
use coatnext::checks::gradient_suite;
use coatnext::data::{make_folds, synth_dataset, SynthSpec};
use coatnext::metrics::{auc, metrics_from_confusion, ConfusionMatrix};
use coatnext::model::{Model, ModelConfig};
use coatnext::param::{initialize, Binder};
use coatnext::report::{AblationTable, RunConfig, REFERENCE_PARAMS};
use coatnext::train::{fit, TrainConfig};
use coatnext::{Tape, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn noise(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-scale..scale)).unwrap()
}

fn a1_gradients() -> Outcome {
    let suite = gradient_suite();
    let required = [
        "conv2d",
        "layer_norm",
        "softmax",
        "linear",
        "grn",
        "channel_attention",
        "spatial_attention",
        "cbam",
        "se",
        "eca",
        "convnextv2_block",
        "improved_convnextv2_block (none)",
        "improved_convnextv2_block (se)",
        "improved_convnextv2_block (eca)",
        "improved_convnextv2_block (cbam)",
        "mbconv_block",
        "relpos_attention",
        "transformer_block",
        "cross_entropy",
    ];
    for name in required {
        ensure(suite.iter().any(|e| e.name == name), || format!("no check for {name}"))?;
    }
    let failed: Vec<String> = suite
        .iter()
        .filter(|e| !e.report.pass)
        .map(|e| format!("{} ({:.2e})", e.name, e.report.max_rel_err))
        .collect();
    ensure(failed.is_empty(), || format!("failed: {}", failed.join(", ")))?;
    let worst = suite.iter().map(|e| e.report.max_rel_err).fold(0.0, f64::max);
    Ok(format!("{} layers, worst relative error {worst:.2e}", suite.len()))
}

fn a2_invariants() -> Outcome {
    // attention rows
    let cfg = BlockConfig {
        head_width: 2,
        ..BlockConfig::default()
    };
    let spec = |kind, attention| BlockSpec {
        kind,
        attention,
        channels: 8,
        size: [3, 3],
    };
    let t = spec(BlockKind::RelPosTransformer, AttentionKind::None);
    let mut params = initialize::<f64, _>(1, |src| t.declare(src, "b", &cfg)).unwrap();
    for (i, p) in params.values_mut().enumerate() {
        *p = noise(p.shape(), 50 + i as u64, 0.5);
    }
    let mut tape = Tape::<f64>::new();
    let mut binder = Binder::bind_all(&mut tape, &params, false);
    let BlockParams::Transformer(a) = t.declare(&mut binder, "b", &cfg).unwrap() else {
        unreachable!()
    };
    let x = tape.constant(noise(&[2, 8, 3, 3], 2, 3.0));
    let w = blocks::relpos_attention_weights(&mut tape, x, &a).map_err(|e| e.to_string())?;
    let worst_row = tape
        .value(w)
        .data()
        .chunks(9)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(worst_row <= 1e-6, || format!("attention row sum off by {worst_row:.2e}"))?;

    // GRN response
    let x = noise(&[3, 6, 4, 4], 3, 2.0);
    let response = |x: &Tensor<f64>| {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let r = grn_response(&mut tape, v, 0.0, GrnDenominator::Sum).unwrap();
        tape.value(r).data().to_vec()
    };
    let r = response(&x);
    let worst_sum = r.chunks(6).map(|s| (s.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    ensure(worst_sum <= 1e-6, || format!("GRN response sums off by {worst_sum:.2e}"))?;
    for s in [0.01, 7.0, 300.0] {
        let scaled = response(&x.map(|v| v * s));
        let d = r.iter().zip(&scaled).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(d <= 1e-6, || format!("GRN response changes by {d:.2e} under scale {s}"))?;
    }

    // identity with zeroed final projections
    let cfg = BlockConfig::default();
    let x = noise(&[2, 8, 5, 5], 4, 1.5);
    let mut specs: Vec<BlockSpec> = AttentionKind::ALL
        .iter()
        .map(|&a| BlockSpec {
            size: [5, 5],
            ..spec(BlockKind::ImprovedConvNeXtV2, a)
        })
        .collect();
    for kind in [BlockKind::MBConv, BlockKind::RelPosTransformer] {
        specs.push(BlockSpec {
            size: [5, 5],
            ..spec(kind, AttentionKind::None)
        });
    }
    for (i, s) in specs.iter().enumerate() {
        let mut params = initialize::<f64, _>(10 + i as u64, |src| s.declare(src, "b", &cfg)).unwrap();
        for (j, p) in params.values_mut().enumerate() {
            *p = noise(p.shape(), 100 * i as u64 + j as u64, 0.5);
        }
        let mut tape = Tape::<f64>::new();
        let mut binder = Binder::bind_all(&mut tape, &params, false);
        let finals = s.declare(&mut binder, "b", &cfg).unwrap().final_projections();
        for f in finals {
            let p = params.get_mut(format!("b.{f}").as_str()).unwrap();
            *p = Tensor::zeros(p.shape().to_vec()).unwrap();
        }
        let mut tape = Tape::<f64>::new();
        let mut binder = Binder::bind_all(&mut tape, &params, false);
        let block = s.declare(&mut binder, "b", &cfg).unwrap();
        let xv = tape.constant(x.clone());
        let y = block.forward(&mut tape, xv).map_err(|e| e.to_string())?;
        ensure(tape.value(y) == &x, || format!("{:?}/{:?} is not the identity", s.kind, s.attention))?;
    }
    let plain = initialize::<f64, _>(20, |src| ConvNeXtV2BlockParams::declare(src, "b", 8, AttentionKind::None, &cfg))
        .unwrap()
        .into_iter()
        .map(|(n, t)| {
            let t = if n.starts_with("b.project.") {
                Tensor::zeros(t.shape().to_vec()).unwrap()
            } else {
                noise(t.shape(), 21, 0.5)
            };
            (n, t)
        })
        .collect::<IndexMap<_, _>>();
    let mut tape = Tape::<f64>::new();
    let mut binder = Binder::bind_all(&mut tape, &plain, false);
    let p = ConvNeXtV2BlockParams::declare(&mut binder, "b", 8, AttentionKind::None, &cfg).unwrap();
    let xv = tape.constant(x.clone());
    let y = blocks::convnextv2_block(&mut tape, xv, &p).map_err(|e| e.to_string())?;
    ensure(tape.value(y) == &x, || "plain ConvNeXtV2 block is not the identity".into())?;

    // zero-parameter attention scaling
    let mut tape = Tape::<f64>::new();
    let f = noise(&[2, 8, 5, 5], 6, 2.0);
    let fv = tape.constant(f.clone());
    let zeros = |tape: &mut Tape<f64>, shape: &[usize]| tape.constant(Tensor::zeros(shape.to_vec()).unwrap());
    let cbam = CbamParams {
        mlp_w1: zeros(&mut tape, &[2, 8]),
        mlp_w2: zeros(&mut tape, &[8, 2]),
        spatial_kernel: zeros(&mut tape, &[1, 2, 7, 7]),
        spatial_bias: zeros(&mut tape, &[1]),
    };
    let se = SeParams {
        w1: zeros(&mut tape, &[2, 8]),
        w2: zeros(&mut tape, &[8, 2]),
    };
    let eca = EcaParams {
        kernel: zeros(&mut tape, &[3]),
    };
    let outs = [
        ("CBAM", attention::cbam(&mut tape, fv, &cbam), 0.25),
        ("SE", attention::se(&mut tape, fv, &se), 0.5),
        ("ECA", attention::eca(&mut tape, fv, &eca), 0.5),
    ];
    for (name, out, k) in outs {
        let out = out.map_err(|e| e.to_string())?;
        ensure(tape.value(out) == &f.map(|v| k * v), || format!("zero {name} does not scale by {k}"))?;
    }
    Ok(format!("row sums within {worst_row:.1e}, GRN sums within {worst_sum:.1e}, 7 identity blocks exact"))
}

fn a3_overfit() -> Outcome {
    let manifest = synth_dataset(
        SynthSpec {
            num_classes: 8,
            per_class: 64,
            size: [32, 32],
        },
        7,
    )
    .map_err(|e| e.to_string())?;
    let model_cfg = ModelConfig::tiny(8);
    let widths: Vec<usize> = model_cfg.stages.iter().map(|s| s.channels).collect();
    ensure(widths == [8, 16, 32, 64, 128], || format!("tiny widths {widths:?}"))?;
    ensure(
        model_cfg.stages.iter().any(|s| s.attention == AttentionKind::Cbam),
        || "tiny preset has no CBAM stage".into(),
    )?;
    let cfg = TrainConfig {
        learning_rate: 0.01,
        momentum: 0.9,
        batch_size: 32,
        epochs: 15,
        seed: 0,
        ..TrainConfig::default()
    };
    let all: Vec<usize> = (0..manifest.len()).collect();
    let run = || -> Result<_, String> {
        let mut model = Model::<f32>::build(model_cfg.clone(), cfg.seed).map_err(|e| e.to_string())?;
        let history = fit(&mut model, &manifest, &all, &[], &cfg).map_err(|e| e.to_string())?;
        Ok((model, history))
    };
    let (m1, h1) = run()?;
    let (m2, h2) = run()?;
    let reached = h1.iter().find(|r| r.train_acc >= 0.95).map(|r| r.epoch);
    let accs: Vec<String> = h1.iter().map(|r| format!("{:.3}", r.train_acc)).collect();
    let Some(epoch) = reached else {
        return Err(format!("train accuracy never reached 0.95: {}", accs.join(" ")));
    };
    ensure(h1 == h2, || "histories differ between identical runs".into())?;
    let same = m1
        .params()
        .values()
        .zip(m2.params().values())
        .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    ensure(same, || "weights differ between identical runs".into())?;
    Ok(format!("train accuracy ≥ 0.95 at epoch {epoch}, final {:.4}, two runs bit-identical", h1.last().unwrap().train_acc))
}

struct Triple {
    label: usize,
    pred: usize,
    scores: Vec<f64>,
}

fn tally(triples: &[Triple], k: usize) -> (Vec<[u64; 3]>, u64) {
    let mut per = vec![[0u64; 3]; k];
    let mut correct = 0;
    for t in triples {
        if t.label == t.pred {
            per[t.label][0] += 1;
            correct += 1;
        } else {
            per[t.pred][1] += 1;
            per[t.label][2] += 1;
        }
    }
    (per, correct)
}

fn safe(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn pair_auc(triples: &[Triple], c: usize) -> Option<f64> {
    let pos: Vec<f64> = triples.iter().filter(|t| t.label == c).map(|t| t.scores[c]).collect();
    let neg: Vec<f64> = triples.iter().filter(|t| t.label != c).map(|t| t.scores[c]).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

fn a4_metrics() -> Outcome {
    let mut trials = 0;
    for (k, seed) in [2usize, 8].iter().flat_map(|&k| (0..10u64).map(move |s| (k, s))) {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 * k as u64 + seed);
        let triples: Vec<Triple> = (0..200)
            .map(|_| {
                let label = rng.gen_range(0..k);
                let pred = if rng.gen_bool(0.6) { label } else { rng.gen_range(0..k) };
                let scores = (0..k).map(|_| (rng.gen_range(0..20) as f64) / 20.0).collect();
                Triple { label, pred, scores }
            })
            .collect();
        let labels: Vec<usize> = triples.iter().map(|t| t.label).collect();
        let preds: Vec<usize> = triples.iter().map(|t| t.pred).collect();
        let cm = ConfusionMatrix::from_predictions(k, &labels, &preds).map_err(|e| e.to_string())?;
        let m = metrics_from_confusion(&cm).map_err(|e| e.to_string())?;
        let (per, correct) = tally(&triples, k);
        let n = triples.len() as f64;
        for (c, [tp, fp, fn_]) in per.iter().enumerate() {
            ensure(
                cm.tp(c) == *tp && cm.fp(c) == *fp && cm.fn_(c) == *fn_,
                || format!("k={k} seed={seed} class {c} counts disagree"),
            )?;
        }
        let prec: Vec<f64> = per.iter().map(|[tp, fp, _]| safe(*tp as f64, (tp + fp) as f64)).collect();
        let rec: Vec<f64> = per.iter().map(|[tp, _, fn_]| safe(*tp as f64, (tp + fn_) as f64)).collect();
        let f1: Vec<f64> = prec.iter().zip(&rec).map(|(p, r)| safe(2.0 * p * r, p + r)).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let p_o = correct as f64 / n;
        let p_e: f64 = (0..k)
            .map(|c| {
                let truth = labels.iter().filter(|&&l| l == c).count() as f64;
                let predicted = preds.iter().filter(|&&p| p == c).count() as f64;
                truth * predicted / (n * n)
            })
            .sum();
        let kappa = (p_o - p_e) / (1.0 - p_e);
        let pairs = [
            ("accuracy", m.accuracy, p_o),
            ("precision", m.precision, mean(&prec)),
            ("recall", m.recall, mean(&rec)),
            ("f1", m.f1, mean(&f1)),
            ("kappa", m.kappa, kappa),
        ];
        for (name, got, want) in pairs {
            ensure((got - want).abs() <= 1e-10, || format!("k={k} seed={seed} {name}: {got} vs {want}"))?;
        }
        let rows: Vec<Vec<f64>> = triples.iter().map(|t| t.scores.clone()).collect();
        let a = auc(&rows, &labels).map_err(|e| e.to_string())?;
        let want = if k == 2 {
            pair_auc(&triples, 1).unwrap()
        } else {
            let v: Vec<f64> = (0..k).filter_map(|c| pair_auc(&triples, c)).collect();
            mean(&v)
        };
        ensure((a.value - want).abs() <= 1e-10, || format!("k={k} seed={seed} auc {} vs {want}", a.value))?;
        trials += 1;
    }
    let cm = ConfusionMatrix::from_counts(vec![vec![40, 5], vec![5, 50]]).map_err(|e| e.to_string())?;
    let m = metrics_from_confusion(&cm).map_err(|e| e.to_string())?;
    ensure((m.accuracy - 0.9).abs() <= 1e-12, || format!("worked example accuracy {}", m.accuracy))?;
    Ok(format!("{trials} trials of 200 triples match the oracles; worked example accuracy 0.9"))
}

fn a5_architecture(bin: &Path) -> Outcome {
    let cfg = ModelConfig::full(8);
    let model = Model::<f32>::build(cfg.clone(), 0).map_err(|e| e.to_string())?;
    let probe = Tensor::<f32>::zeros([1, 3, 224, 224]).unwrap();
    let mut trace = model.trace(&probe).map_err(|e| e.to_string())?;
    let logits = trace.pop().unwrap_or_default();
    ensure(logits == [1, 8], || format!("eight-class logits {logits:?}"))?;
    let sizes: Vec<usize> = trace.iter().map(|s| s[2]).collect();
    let widths: Vec<usize> = trace.iter().map(|s| s[1]).collect();
    ensure(sizes == [112, 56, 28, 14, 7], || format!("stage sizes {sizes:?}"))?;
    ensure(trace.iter().all(|s| s[2] == s[3]), || format!("non-square stage maps {trace:?}"))?;
    ensure(widths == [32, 64, 128, 256, 512], || format!("stage widths {widths:?}"))?;
    let binary = Model::<f32>::layout(&ModelConfig::full(2)).map_err(|e| e.to_string())?;
    ensure(binary["head.fc.weight"][0] == 2, || "binary head is not 2 wide".into())?;

    let out = Command::new(bin).arg("params").output().map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout);
    ensure(out.status.success() && text.contains("18.8 M"), || format!("params output: {text}"))?;
    let count = model.count_parameters().count;
    let ratio = count as f64 / REFERENCE_PARAMS;
    let band = if (0.75..=1.25).contains(&ratio) { "inside" } else { "outside" };
    println!(
        "A5 INFO parameter count {:.2} M vs reference {:.1} M (ratio {ratio:.3}, {band} the ±25% band)",
        count as f64 / 1e6,
        REFERENCE_PARAMS / 1e6
    );
    Ok("sizes [112, 56, 28, 14, 7], widths [32, 64, 128, 256, 512], heads 8 and 2".into())
}

fn a6_folds() -> Outcome {
    let manifest = synth_dataset(
        SynthSpec {
            num_classes: 8,
            per_class: 3887,
            size: [8, 8],
        },
        1,
    )
    .map_err(|e| e.to_string())?;
    let plan = make_folds(&manifest, 5, 42).map_err(|e| e.to_string())?;
    ensure(plan.assignment.len() == manifest.len(), || "assignment does not cover the manifest".into())?;
    for (c, members) in manifest.by_class().iter().enumerate() {
        let mut sizes = vec![0usize; 5];
        for &i in members {
            sizes[plan.assignment[i]] += 1;
        }
        sizes.sort_unstable();
        ensure(sizes == [777, 777, 777, 778, 778], || format!("class {c} fold sizes {sizes:?}"))?;
    }
    let mut covered = vec![false; manifest.len()];
    for f in 0..5 {
        for i in plan.validation(f) {
            ensure(!covered[i], || format!("entry {i} in two validation folds"))?;
            covered[i] = true;
        }
    }
    ensure(covered.iter().all(|&c| c), || "some entry is in no validation fold".into())?;
    let again = make_folds(&manifest, 5, 42).map_err(|e| e.to_string())?;
    ensure(again == plan && again.hash() == plan.hash(), || "same seed gave a different plan".into())?;
    let other = make_folds(&manifest, 5, 43).map_err(|e| e.to_string())?;
    ensure(other.assignment != plan.assignment, || "a different seed gave the same plan".into())?;
    Ok(format!("31096 entries, per-class folds {{777,777,777,778,778}}, hash {}", &plan.hash()[..12]))
}

fn small_run(dir: &Path, per_class: usize, k: usize, epochs: usize) -> std::io::Result<std::path::PathBuf> {
    let mut cfg = RunConfig::default().with_preset("tiny").expect("preset");
    cfg.data.synth.per_class = per_class;
    cfg.folds.k = k;
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 16;
    cfg.output_dir = dir.join("out");
    let path = dir.join("run.json");
    std::fs::write(&path, cfg.to_json())?;
    Ok(path)
}

fn a7_ablation(bin: &Path) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = small_run(dir.path(), 12, 3, 2).map_err(|e| e.to_string())?;
    let out = Command::new(bin)
        .args(["ablate", "--plan", "full", "--config"])
        .arg(&cfg)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("ablate failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    let csv = std::fs::read_to_string(dir.path().join("out/ablation.csv")).map_err(|e| e.to_string())?;
    let table = AblationTable::from_csv(&csv).map_err(|e| e.to_string())?;
    let names: Vec<&str> = table.rows.iter().map(|r| r.variant.as_str()).collect();
    ensure(
        names == ["MBConv", "ConvNeXtV2", "ConvNeXtV2+SE", "ConvNeXtV2+ECA", "ConvNeXtV2+CBAM"],
        || format!("rows {names:?}"),
    )?;
    ensure(table.rows.iter().all(|r| r.fold_hash == table.rows[0].fold_hash), || "fold hashes differ".into())?;
    ensure(table.rows.iter().all(|r| r.diff_confined), || "a parameter diff leaves the swapped blocks".into())?;
    for r in &table.rows {
        let auc = r.auc.ok_or_else(|| format!("{} has no AUC", r.variant))?;
        for (name, v) in [("accuracy", r.accuracy), ("precision", r.precision), ("recall", r.recall), ("f1", r.f1), ("auc", auc)] {
            ensure((0.0..=1.0).contains(&v), || format!("{} {name} = {v}", r.variant))?;
        }
    }
    let accs: Vec<f64> = table.rows.iter().map(|r| r.accuracy).collect();
    let ordered = accs.windows(2).all(|w| w[0] < w[1]);
    println!(
        "A7 INFO accuracies {} ({} the published ordering)",
        names.iter().zip(&accs).map(|(n, a)| format!("{n}={a:.3}")).collect::<Vec<_>>().join(" "),
        if ordered { "matches" } else { "does not match" }
    );
    Ok(format!("5 rows, fold hash {}, metrics in [0,1], diffs confined", &table.rows[0].fold_hash[..12]))
}

fn strip_timestamp(text: &str) -> String {
    text.lines().filter(|l| !l.trim_start().starts_with("\"created_at\"")).collect::<Vec<_>>().join("\n")
}

fn a8_determinism(bin: &Path) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = small_run(dir.path(), 8, 2, 1).map_err(|e| e.to_string())?;
    let out_dir = dir.path().join("out");
    let first = dir.path().join("first");
    let run = || -> Result<(), String> {
        let out = Command::new(bin).arg("cv").arg("--config").arg(&cfg).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("cv failed: {}", String::from_utf8_lossy(&out.stderr)))
    };
    run()?;
    std::fs::rename(&out_dir, &first).map_err(|e| e.to_string())?;
    run()?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    let a = String::from_utf8(read(&first.join("cv_report.json"))?).map_err(|e| e.to_string())?;
    let b = String::from_utf8(read(&out_dir.join("cv_report.json"))?).map_err(|e| e.to_string())?;
    ensure(a.lines().filter(|l| l.contains("\"created_at\"")).count() == 1, || "timestamp is not one field".into())?;
    ensure(strip_timestamp(&a) == strip_timestamp(&b), || "cv reports differ beyond the timestamp".into())?;
    let mut files: Vec<String> = std::fs::read_dir(&first)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n != "cv_report.json")
        .collect();
    files.sort();
    ensure(files.iter().filter(|f| f.ends_with(".ckpt")).count() == 2, || format!("artifacts {files:?}"))?;
    for f in &files {
        ensure(read(&first.join(f))? == read(&out_dir.join(f))?, || format!("{f} differs"))?;
    }
    Ok(format!("cv_report.json equal apart from created_at; {} artifacts byte-identical", files.len()))
}

fn main() -> ExitCode {
    let bin = Path::new(env!("CARGO_BIN_EXE_coatnext"));
    let criteria: Vec<(&str, &str, Box<dyn Fn() -> Outcome>)> = vec![
        ("A1", "gradient suite", Box::new(a1_gradients)),
        ("A2", "normalization and identity invariants", Box::new(a2_invariants)),
        ("A3", "overfit check", Box::new(a3_overfit)),
        ("A4", "metrics oracle", Box::new(a4_metrics)),
        ("A5", "architecture conformance", Box::new(|| a5_architecture(bin))),
        ("A6", "fold contract", Box::new(a6_folds)),
        ("A7", "ablation machinery", Box::new(|| a7_ablation(bin))),
        ("A8", "end-to-end determinism", Box::new(|| a8_determinism(bin))),
    ];
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('A')).collect();
    let mut failures = 0;
    for (id, title, check) in &criteria {
        if !selected.is_empty() && !selected.iter().any(|s| s == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id} PASS {title}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failures += 1;
                println!("{id} FAIL {title}: {why} [{secs:.1}s]");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

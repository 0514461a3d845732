use super::checkpoint::{parse_bytes, to_bytes};
use super::*;
use crate::attention::AttentionKind;
use crate::blocks::BlockKind;
use crate::oracle::{self as o, noise};

fn tiny() -> ModelConfig {
    ModelConfig::tiny(8)
}

/// Tiny plan shrunk further for fast f64 checks.
fn micro() -> ModelConfig {
    let mut cfg = ModelConfig::tiny(3);
    for (stage, (l, d)) in cfg.stages.iter_mut().zip([(2, 4), (1, 8), (1, 8), (1, 8), (1, 16)]) {
        stage.layers = l;
        stage.channels = d;
    }
    cfg.blocks.head_width = 4;
    cfg.input_size = [16, 16];
    cfg
}

#[test]
fn full_size_stage_shapes() {
    for classes in [8, 2] {
        let model = Model::<f32>::build(ModelConfig::full(classes), 0).unwrap();
        let shapes = model.trace(&Tensor::zeros([1, 3, 224, 224]).unwrap()).unwrap();
        let sizes: Vec<usize> = shapes[..5].iter().map(|s| s[2]).collect();
        let widths: Vec<usize> = shapes[..5].iter().map(|s| s[1]).collect();
        assert_eq!(sizes, [112, 56, 28, 14, 7]);
        assert_eq!(widths, [32, 64, 128, 256, 512]);
        assert_eq!(shapes[5], [1, classes]);
    }
}

#[test]
fn tiny_stage_shapes_and_variants_agree() {
    let x = Tensor::zeros([2, 3, 32, 32]).unwrap();
    let mut all = vec![];
    for v in Variant::ALL {
        let model = Model::<f32>::build(tiny().with_variant(v), 1).unwrap();
        let shapes = model.trace(&x).unwrap();
        assert_eq!(shapes[..5].iter().map(|s| s[2]).collect::<Vec<_>>(), [32, 16, 8, 4, 2]);
        assert_eq!(shapes[5], [2, 8]);
        all.push(shapes);
    }
    assert!(all.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn same_seed_same_parameters() {
    let a = Model::<f32>::build(tiny(), 42).unwrap();
    let b = Model::<f32>::build(tiny(), 42).unwrap();
    let c = Model::<f32>::build(tiny(), 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn names_are_unique_and_stable() {
    let m = Model::<f32>::build(tiny(), 0).unwrap();
    let layout = Model::<f32>::layout(&tiny()).unwrap();
    assert_eq!(m.params().keys().collect::<Vec<_>>(), layout.keys().collect::<Vec<_>>());
    assert!(m.params().contains_key("s1.blocks.0.attn.mlp_w1"));
    assert!(m.params().contains_key("s4.blocks.1.rel_bias"));
    assert_eq!(m.params()["s4.blocks.1.rel_bias"].shape(), &[4, 3, 3]);
}

#[test]
fn attention_swap_changes_only_attention_parameters() {
    let base = Model::<f32>::build(tiny().with_variant(Variant::Convnextv2), 0).unwrap();
    for v in [Variant::Convnextv2Se, Variant::Convnextv2Eca, Variant::Convnextv2Cbam] {
        let m = Model::<f32>::build(tiny().with_variant(v), 0).unwrap();
        let d = param_diff(&base, &m);
        assert!(d.only_left.is_empty() && d.reshaped.is_empty());
        assert!(!d.only_right.is_empty());
        assert!(d.only_right.iter().all(|n| n.contains(".attn.")), "{v:?}: {d:?}");
    }
    let mb = Model::<f32>::build(tiny().with_variant(Variant::Mbconv), 0).unwrap();
    let d = param_diff(&base, &mb);
    assert!(d.names().all(|n| n.starts_with("s1.blocks.") || n.starts_with("s2.blocks.")), "{d:?}");
}

#[test]
fn duplicated_and_permuted_samples() {
    let model = Model::<f64>::build(micro(), 5).unwrap();
    let img = noise(&[1, 3, 16, 16], 1, 1.0);
    let other = noise(&[1, 3, 16, 16], 2, 1.0);
    let batch = crate::tensor::ops::concat(&[&img, &other, &img], 0).unwrap();
    let y = model.forward(&batch).unwrap();
    assert_eq!(y.data()[..3], y.data()[6..]);
    assert_ne!(y.data()[..3], y.data()[3..6]);
    let swapped = crate::tensor::ops::concat(&[&other, &img, &img], 0).unwrap();
    let z = model.forward(&swapped).unwrap();
    assert_eq!(z.data()[..3], y.data()[3..6]);
    assert_eq!(z.data()[3..6], y.data()[..3]);
    assert!(y.all_finite());
}

#[test]
fn wrong_input_size_is_rejected() {
    let model = Model::<f32>::build(tiny(), 0).unwrap();
    for shape in [[1, 3, 64, 64], [1, 1, 32, 32]] {
        assert!(matches!(model.forward(&Tensor::zeros(shape).unwrap()), Err(Error::Dimension(_))));
    }
}

#[test]
fn invalid_plans_are_configuration_errors() {
    let mut c = tiny();
    c.input_size = [30, 30];
    assert!(matches!(Model::<f32>::build(c, 0), Err(Error::Config(_))));
    let mut c = tiny();
    c.stages[3].attention = AttentionKind::Cbam;
    assert!(matches!(Model::<f32>::build(c, 0), Err(Error::Config(_))));
    let mut c = tiny();
    c.stages.swap(0, 1);
    assert!(matches!(Model::<f32>::build(c, 0), Err(Error::Config(_))));
    let mut c = tiny();
    c.stages[2].layers = 0;
    assert!(matches!(Model::<f32>::build(c, 0), Err(Error::Config(_))));
}

#[test]
fn zeroed_projections_reduce_to_downsample_chain() {
    let cfg = micro();
    let mut model = Model::<f64>::build(cfg.clone(), 9).unwrap();
    let names: Vec<String> = model
        .params()
        .keys()
        .filter(|n| {
            n.contains(".blocks.")
                && ["project.", "output.", "ffn2."].iter().any(|p| n.contains(p))
        })
        .cloned()
        .collect();
    assert!(!names.is_empty());
    for n in &names {
        let t = model.param_mut(n).unwrap();
        *t = Tensor::zeros(t.shape().to_vec()).unwrap();
    }
    let x = noise(&[2, 3, 16, 16], 3, 1.0);
    let got = model.forward(&x).unwrap();

    let p = model.params();
    let mut h = x.clone();
    for i in 0..2 {
        let pre = format!("stem.{i}");
        h = o::conv2d(&h, &p[&format!("{pre}.conv.weight")], Some(&p[&format!("{pre}.conv.bias")]), 1, [1, 1], 1);
        h = o::layer_norm(&h, &p[&format!("{pre}.norm.gamma")], &p[&format!("{pre}.norm.beta")], 1e-6).map(o::gelu);
    }
    for s in 1..5 {
        let w = &p[&format!("s{s}.down.weight")];
        let w = w.reshape([w.shape()[0], w.shape()[1], 1, 1]).unwrap();
        h = o::conv2d(&h, &w, Some(&p[&format!("s{s}.down.bias")]), 2, [0, 0], 1);
    }
    let (avg, _) = o::global_pools(&h);
    let c = h.shape()[1];
    let pooled = o::t(&[2, c, 1, 1], avg);
    let normed = o::layer_norm(&pooled, &p["head.norm.gamma"], &p["head.norm.beta"], 1e-6);
    let want = crate::tensor::ops::linear(
        &normed.reshape([2, c]).unwrap(),
        &p["head.fc.weight"],
        Some(&p["head.fc.bias"]),
    )
    .unwrap();
    assert!(got.max_abs_diff(&want) < 1e-9);
}

#[test]
fn head_norm_is_optional() {
    let mut cfg = micro();
    cfg.head_norm = false;
    let m = Model::<f32>::build(cfg, 0).unwrap();
    assert!(!m.params().keys().any(|n| n.starts_with("head.norm")));
    assert_eq!(m.forward(&Tensor::zeros([1, 3, 16, 16]).unwrap()).unwrap().shape(), &[1, 3]);
}

#[test]
fn downsample_halves_and_projects() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(noise(&[1, 32, 112, 112], 4, 1.0));
    let p = Projection {
        weight: tape.constant(noise(&[64, 32], 5, 0.2)),
        bias: tape.constant(Tensor::zeros([64]).unwrap()),
    };
    let y = downsample(&mut tape, x, &p).unwrap();
    assert_eq!(tape.shape(y), &[1, 64, 56, 56]);
    let w4 = tape.value(p.weight).reshape([64, 32, 1, 1]).unwrap();
    let bias = Tensor::zeros([64]).unwrap();
    let want = crate::tensor::ops::conv2d(tape.value(x), &w4, Some(&bias), Conv2dOptions::new(2, 0)).unwrap();
    assert_eq!(tape.value(y), &want);
    let looped = o::conv2d(tape.value(x), &w4, None, 2, [0, 0], 1);
    assert!(tape.value(y).max_abs_diff(&looped) < 1e-12);

    // identity-embedded weights copy every channel at even coordinates
    let xs = noise(&[1, 2, 4, 6], 6, 1.0);
    let xv = tape.constant(xs.clone());
    let eye = Tensor::from_fn([4, 2], |i| if i / 2 % 2 == i % 2 { 1.0 } else { 0.0 }).unwrap();
    let p = Projection {
        weight: tape.constant(eye),
        bias: tape.constant(Tensor::zeros([4]).unwrap()),
    };
    let y = downsample(&mut tape, xv, &p).unwrap();
    let y = tape.value(y);
    for c in 0..4 {
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(y.at(&[0, c, i, j]), xs.at(&[0, c % 2, 2 * i, 2 * j]));
            }
        }
    }

    let odd = tape.constant(noise(&[1, 2, 5, 4], 7, 1.0));
    assert!(matches!(downsample(&mut tape, odd, &p), Err(Error::Dimension(_))));
}

#[test]
fn parameter_counting() {
    let mut p = IndexMap::new();
    assert_eq!(count_parameters::<f32>(&p).count, 0);
    p.insert("fc.weight".to_string(), Tensor::<f32>::zeros([8, 10]).unwrap());
    p.insert("fc.bias".to_string(), Tensor::<f32>::zeros([8]).unwrap());
    assert_eq!(count_parameters(&p), ParamCount { count: 88, bytes_f32: 352 });

    let layout = Model::<f32>::layout(&ModelConfig::full(8)).unwrap();
    let total: usize = layout.values().map(|s| s.iter().product::<usize>()).sum();
    let m = Model::<f32>::build(ModelConfig::full(8), 0).unwrap();
    assert_eq!(m.count_parameters().count, total);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut model = Model::<f32>::build(tiny(), 3).unwrap();
    for (i, t) in model.params.values_mut().enumerate() {
        *t = t.map(|v| v * (1.0 + i as f32 * 1e-3) + 1e-7);
    }
    let mut meta = IndexMap::new();
    meta.insert("seed".to_string(), serde_json::json!(3));
    let size = save_checkpoint(&model, &path, meta.clone()).unwrap();
    let (loaded, manifest) = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(manifest.metadata, meta);
    for ((n, a), (m, b)) in model.params().iter().zip(loaded.params()) {
        assert_eq!(n, m);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    assert_eq!(loaded.config(), model.config());

    let json_len = serde_json::to_vec(&manifest).unwrap().len() as u64;
    assert_eq!(size, 16 + json_len + model.count_parameters().bytes_f32 as u64);

    let x = noise(&[2, 3, 32, 32], 8, 1.0).cast::<f32>();
    let ya = model.forward(&x).unwrap();
    let yb = loaded.forward(&x).unwrap();
    assert_eq!(ya.data(), yb.data());

    // identical models serialize identically
    assert_eq!(to_bytes(&model, meta.clone()).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn failed_load_leaves_model_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("renamed.ckpt");
    let source = Model::<f32>::build(micro(), 1).unwrap();
    let mut params = source.params().clone();
    let (i, old, t) = params.shift_remove_full("s2.blocks.0.grn.gamma").unwrap();
    params.shift_insert(i, "s2.blocks.0.grn.scale".to_string(), t);
    let _ = old;
    let renamed = Model {
        config: source.config().clone(),
        params,
    };
    save_checkpoint(&renamed, &path, IndexMap::new()).unwrap();

    let mut target = Model::<f32>::build(micro(), 2).unwrap();
    let before = target.clone();
    let err = load_into(&mut target, &path).unwrap_err().to_string();
    assert!(err.contains("s2.blocks.0.grn.gamma"), "{err}");
    assert_eq!(target, before);
    assert!(load_checkpoint::<f32>(&path).is_err());

    // shape mismatch: a checkpoint of a wider model
    let wide_path = dir.path().join("wide.ckpt");
    let mut wide_cfg = micro();
    wide_cfg.stages[1].channels = 16;
    save_checkpoint(&Model::<f32>::build(wide_cfg, 0).unwrap(), &wide_path, IndexMap::new()).unwrap();
    assert!(load_into(&mut target, &wide_path).is_err());
    assert_eq!(target, before);

    // dtype mismatch
    let f64_path = dir.path().join("f64.ckpt");
    save_checkpoint(&source.cast::<f64>(), &f64_path, IndexMap::new()).unwrap();
    assert!(load_into(&mut target, &f64_path).is_err());
    assert_eq!(target, before);

    load_into(&mut target, {
        let p = dir.path().join("ok.ckpt");
        save_checkpoint(&source, &p, IndexMap::new()).unwrap();
        p
    })
    .unwrap();
    assert_eq!(target, source);
}

#[test]
fn damaged_files_are_described() {
    let model = Model::<f32>::build(micro(), 0).unwrap();
    let bytes = to_bytes(&model, IndexMap::new()).unwrap();
    assert!(parse_bytes(&bytes).is_ok());
    let err = parse_bytes(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
    assert!(err.contains("data section"), "{err}");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(parse_bytes(&bad).unwrap_err().to_string().contains("magic"));
    let mut corrupt = bytes.clone();
    corrupt[17] = b'#';
    assert!(parse_bytes(&corrupt).unwrap_err().to_string().contains("manifest"));
    assert!(parse_bytes(&bytes[..20]).is_err());
}

#[test]
fn model_gradients_match_finite_differences() {
    let cfg = micro();
    let model = Model::<f64>::build(cfg.clone(), 11).unwrap();
    let x = noise(&[1, 3, 16, 16], 12, 1.0);
    let r = crate::tensor::grad_check(
        |tape, xv| {
            let bound = model.bind(tape, false)?;
            bound.network.forward(tape, xv, None)
        },
        &x,
        1e-4,
    );
    assert!(r.pass, "{r:?}");
}

#[test]
fn variant_names_parse() {
    for v in Variant::ALL {
        assert_eq!(Variant::parse(v.label()).unwrap(), v);
    }
    assert!(Variant::parse("resnet").is_err());
    let cfg = tiny().with_variant(Variant::Mbconv);
    assert_eq!(cfg.stages[1].block_kind, BlockKind::MBConv);
    assert_eq!(cfg.stages[1].attention, AttentionKind::None);
    assert_eq!(cfg.stages[3].block_kind, BlockKind::RelPosTransformer);
}

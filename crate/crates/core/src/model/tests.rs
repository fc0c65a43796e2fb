use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::ParamSet;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(shape: [usize; 4], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Replaces every parameter (biases included) with small random values so
/// that no gradient path is trivially zero.
fn jitter(params: &mut ParamSet, seed: u64) {
    let mut r = rng(seed);
    for p in params.iter_mut() {
        for v in p.value.data_mut() {
            *v = r.random_range(-0.5..0.5);
        }
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

const EPS: f64 = 1e-6;

/// Central differences of `f` with respect to every entry of `x`.
fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += EPS;
            let mut minus = x.clone();
            minus.data_mut()[i] -= EPS;
            (f(&plus) - f(&minus)) / (2.0 * EPS)
        })
        .collect()
}

/// Central differences with respect to every scalar parameter.
fn numeric_param_grads(params: &ParamSet, f: impl Fn(&ParamSet) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    for (id, p) in params.iter() {
        for i in 0..p.value.len() {
            let mut plus = params.clone();
            plus.get_mut(id).data_mut()[i] += EPS;
            let mut minus = params.clone();
            minus.get_mut(id).data_mut()[i] -= EPS;
            out.push((f(&plus) - f(&minus)) / (2.0 * EPS));
        }
    }
    out
}

fn flatten(grads: &Grads) -> Vec<f64> {
    grads.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn small_config() -> ModelConfig {
    ModelConfig {
        stage_widths: [4, 6, 8, 8],
        fusion_width: 4,
        top_fusion_width: None,
        num_classes: 5,
        attention_enabled: true,
        head: HeadKind::Classification,
        dropout_rate: 0.5,
    }
}

#[test]
fn encoder_shapes() {
    let model = DabcModel::new(ModelConfig::classification(&QuantizationSpec::default()), 1).unwrap();
    let feats = model.encoder_forward(&Tensor::zeros([1, 3, 96, 128])).unwrap();
    assert_eq!(feats[3].shape(), [1, 256, 3, 4]);
    assert_eq!(feats[0].shape(), [1, 32, 24, 32]);
    let feats = model.encoder_forward(&Tensor::zeros([1, 3, 256, 320])).unwrap();
    assert_eq!(feats[0].shape(), [1, 32, 64, 80]);
    assert!(matches!(
        model.encoder_forward(&Tensor::zeros([1, 3, 100, 128])),
        Err(Error::Shape(_))
    ));
}

#[test]
fn full_forward_shapes_and_records() {
    let spec = QuantizationSpec::default();
    let model = DabcModel::new(ModelConfig::classification(&spec), 2).unwrap();
    let image = random_tensor([2, 3, 96, 128], &mut rng(3));
    let out = model.forward(&image, Mode::Eval).unwrap();
    let Prediction::Scores(s) = &out.prediction else { panic!("classification") };
    assert_eq!(s.tensor().shape(), [2, 151, 24, 32]);
    assert_eq!(out.attention.len(), 8);
    for b in 0..2 {
        let blocks: Vec<usize> = out.attention.iter().filter(|r| r.input == b).map(|r| r.block).collect();
        assert_eq!(blocks, vec![4, 3, 2, 1]);
    }
    assert!(out
        .attention
        .iter()
        .all(|r| r.gate.len() == 64 && r.gate.iter().all(|&a| a > 0.0 && a < 1.0)));
    let (decoded, _) = model
        .decoder_forward(
            &model.encoder_forward(&image).unwrap(),
            &model.global_context(&model.encoder_forward(&image).unwrap()[3]).unwrap(),
        )
        .unwrap();
    assert_eq!(decoded.shape(), [2, 64, 24, 32]);
}

#[test]
fn full_geometry_score_volume() {
    let spec = QuantizationSpec::default();
    let model = DabcModel::new(ModelConfig::classification(&spec), 4).unwrap();
    let out = model.forward(&Tensor::full([1, 3, 256, 320], 0.5), Mode::Eval).unwrap();
    let Prediction::Scores(s) = out.prediction else { panic!() };
    assert_eq!(s.tensor().shape(), [1, 151, 64, 80]);
}

#[test]
fn eval_is_deterministic_train_is_seeded() {
    let model = DabcModel::new(small_config(), 5).unwrap();
    let image = random_tensor([1, 3, 32, 64], &mut rng(6));
    let a = model.forward_train(&image, Mode::Eval).unwrap().0;
    let b = model.forward_train(&image, Mode::Eval).unwrap().0;
    assert_eq!(a, b);
    let t1 = model.forward_train(&image, Mode::Train { dropout_seed: 9 }).unwrap().0;
    let t2 = model.forward_train(&image, Mode::Train { dropout_seed: 9 }).unwrap().0;
    let t3 = model.forward_train(&image, Mode::Train { dropout_seed: 10 }).unwrap().0;
    assert_eq!(t1, t2);
    assert_ne!(t1, t3);
    assert_ne!(t1, a);
}

#[test]
fn predict_scores_softmax_contract() {
    let model = DabcModel::new(small_config(), 7).unwrap();
    let dec = random_tensor([1, 4, 3, 5], &mut rng(8));
    let Prediction::Scores(s) = model.predict_scores(&dec, Mode::Eval).unwrap() else { panic!() };
    let t = s.tensor();
    for y in 0..3 {
        for x in 0..5 {
            let sum: f64 = (0..5).map(|c| t.at(0, c, y, x)).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
    // all-equal logits: zero head weights and bias give a uniform distribution
    let mut flat = model.clone();
    for p in flat.params_mut().iter_mut().filter(|p| p.name.starts_with("head.")) {
        p.value.data_mut().fill(0.0);
    }
    let Prediction::Scores(s) = flat.predict_scores(&dec, Mode::Eval).unwrap() else { panic!() };
    assert!(s.tensor().data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
}

#[test]
fn global_context_examples() {
    let mut params = ParamSet::new();
    let gc = GlobalContext::new(&mut params, &mut rng(1), "gc", 3, 2);
    let x = random_tensor([1, 3, 3, 4], &mut rng(2));
    let (out, _) = gc.forward(&params, &x).unwrap();
    assert_eq!(out.shape(), [1, 2, 3, 4]);
    for c in 0..2 {
        let plane = out.plane(0, c);
        assert!(plane.iter().all(|&v| v == plane[0]));
    }
    let (zero, _) = gc.forward(&params, &Tensor::zeros([1, 3, 3, 4])).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
    let constant = Tensor::full([1, 3, 3, 4], 0.7);
    let (out, _) = gc.forward(&params, &constant).unwrap();
    let direct = gc.reduce.forward(&params, &constant).unwrap();
    for (a, b) in out.data().iter().zip(direct.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn ftb_with_zero_residual_is_projection() {
    let mut params = ParamSet::new();
    let ftb = Ftb::new(&mut params, &mut rng(1), "ftb", 64, 64);
    let id = params.find("ftb.unit.conv2.weight").unwrap();
    params.get_mut(id).data_mut().fill(0.0);
    let x = random_tensor([1, 64, 12, 16], &mut rng(2));
    let (out, _) = ftb.forward(&params, &x).unwrap();
    assert_eq!(out.shape(), [1, 64, 12, 16]);
    assert_eq!(out, ftb.project.forward(&params, &x).unwrap());
    assert!(matches!(
        ftb.forward(&params, &Tensor::zeros([1, 32, 4, 4])),
        Err(Error::Shape(_))
    ));
}

#[test]
fn afa_examples() {
    let mut params = ParamSet::new();
    let afa = Afa::new(&mut params, &mut rng(1), "afa", 8, true);
    let high = random_tensor([2, 8, 3, 5], &mut rng(2));
    let low = random_tensor([2, 8, 3, 5], &mut rng(3));

    let (fused, _, _) = afa.forward(&params, &high, &Tensor::zeros(high.shape())).unwrap();
    assert_eq!(fused, high);

    let mut zeroed = params.clone();
    zeroed.iter_mut().for_each(|p| p.value.data_mut().fill(0.0));
    let (fused, gate, _) = afa.forward(&zeroed, &high, &low).unwrap();
    assert!(gate.unwrap().data().iter().all(|&a| a == 0.5));
    for i in 0..fused.len() {
        assert_eq!(fused.data()[i], high.data()[i] + 0.5 * low.data()[i]);
    }

    assert!(matches!(
        afa.forward(&params, &high, &Tensor::zeros([2, 8, 3, 4])),
        Err(Error::Shape(_))
    ));
    assert_eq!(gate_hidden_width(8), 2);
    assert_eq!(gate_hidden_width(2), 1);
}

fn check_block(
    params: &ParamSet,
    x: &Tensor,
    forward: impl Fn(&ParamSet, &Tensor) -> Tensor,
    backward: impl Fn(&ParamSet, &Tensor, &mut Grads) -> Tensor,
) {
    let r = random_tensor(forward(params, x).shape(), &mut rng(99));
    let loss = |p: &ParamSet, x: &Tensor| forward(p, x).dot(&r);
    let mut grads = params.zero_grads();
    let dx = backward(params, &r, &mut grads);
    let ex = rel_err(dx.data(), &numeric_grad(x, |x| loss(params, x)));
    let ep = rel_err(&flatten(&grads), &numeric_param_grads(params, |p| loss(p, x)));
    assert!(ex < 1e-4, "input gradient rel err {ex}");
    assert!(ep < 1e-4, "parameter gradient rel err {ep}");
}

#[test]
fn global_context_gradient() {
    let mut params = ParamSet::new();
    let gc = GlobalContext::new(&mut params, &mut rng(1), "gc", 3, 2);
    jitter(&mut params, 2);
    let x = random_tensor([2, 3, 3, 4], &mut rng(3));
    check_block(
        &params,
        &x,
        |p, x| gc.forward(p, x).unwrap().0,
        |p, dy, g| {
            let (_, cache) = gc.forward(p, &x).unwrap();
            gc.backward(p, &cache, dy, g).unwrap()
        },
    );
}

#[test]
fn ftb_gradient() {
    let mut params = ParamSet::new();
    let ftb = Ftb::new(&mut params, &mut rng(1), "ftb", 3, 4);
    jitter(&mut params, 2);
    let x = random_tensor([2, 3, 4, 5], &mut rng(3));
    check_block(
        &params,
        &x,
        |p, x| ftb.forward(p, x).unwrap().0,
        |p, dy, g| {
            let (_, cache) = ftb.forward(p, &x).unwrap();
            ftb.backward(p, &cache, dy, g).unwrap()
        },
    );
}

#[test]
fn afa_gradient_both_inputs() {
    for attention in [true, false] {
        let mut params = ParamSet::new();
        let afa = Afa::new(&mut params, &mut rng(1), "afa", 4, attention);
        jitter(&mut params, 2);
        // high and low are stacked along the batch axis so one input tensor
        // covers both gradients.
        let x = random_tensor([4, 4, 3, 3], &mut rng(3));
        let split = |x: &Tensor| {
            let high = Tensor::stack(&[x.select(0), x.select(1)]).unwrap();
            let low = Tensor::stack(&[x.select(2), x.select(3)]).unwrap();
            (high, low)
        };
        check_block(
            &params,
            &x,
            |p, x| {
                let (h, l) = split(x);
                afa.forward(p, &h, &l).unwrap().0
            },
            |p, dy, g| {
                let (h, l) = split(&x);
                let (_, _, cache) = afa.forward(p, &h, &l).unwrap();
                let (dh, dl) = afa.backward(p, &cache, dy, g).unwrap();
                Tensor::stack(&[dh.select(0), dh.select(1), dl.select(0), dl.select(1)]).unwrap()
            },
        );
    }
}

#[test]
fn head_gradient_with_fixed_dropout_mask() {
    for seed in [None, Some(11)] {
        let mut params = ParamSet::new();
        let head = PredictionHead::new(&mut params, &mut rng(1), 3, 5, 0.5);
        jitter(&mut params, 2);
        let x = random_tensor([1, 3, 4, 4], &mut rng(3));
        check_block(
            &params,
            &x,
            |p, x| head.forward(p, x, seed).unwrap().0,
            |p, dy, g| {
                let (_, cache) = head.forward(p, &x, seed).unwrap();
                head.backward(p, &cache, dy, g).unwrap()
            },
        );
    }
}

#[test]
fn end_to_end_gradient() {
    for head in [HeadKind::Classification, HeadKind::Regression] {
        let mut cfg = small_config();
        if head == HeadKind::Regression {
            cfg.head = head;
            cfg.num_classes = 1;
            cfg.attention_enabled = false;
        }
        let mut model = DabcModel::new(cfg, 21).unwrap();
        jitter(model.params_mut(), 22);
        // keep activations in a moderate range through eight residual units
        for p in model.params_mut().iter_mut() {
            p.value.scale_in_place(0.6);
        }
        let image = random_tensor([1, 3, 32, 32], &mut rng(23));
        let mode = Mode::Train { dropout_seed: 5 };
        let (raw, _, tape) = model.forward_train(&image, mode).unwrap();
        let r = random_tensor(raw.shape(), &mut rng(24));
        let (grads, dimage) = model.backward(&tape, &r).unwrap();

        let loss_at = |m: &DabcModel, x: &Tensor| m.forward_train(x, mode).unwrap().0.dot(&r);
        let e_img = rel_err(dimage.data(), &numeric_grad(&image, |x| loss_at(&model, x)));
        assert!(e_img < 1e-3, "{head:?} image gradient rel err {e_img}");

        // Directional check on all parameters at once.
        let mut dir_rng = rng(25);
        let direction: Vec<Tensor> = model
            .params()
            .iter()
            .map(|(_, p)| random_tensor(p.value.shape(), &mut dir_rng))
            .collect();
        let analytic: f64 = grads.tensors().iter().zip(&direction).map(|(g, d)| g.dot(d)).sum();
        let shifted = |s: f64| {
            let mut m = model.clone();
            for (p, d) in m.params_mut().iter_mut().zip(&direction) {
                for (v, dv) in p.value.data_mut().iter_mut().zip(d.data()) {
                    *v += s * dv;
                }
            }
            loss_at(&m, &image)
        };
        let numeric = (shifted(EPS) - shifted(-EPS)) / (2.0 * EPS);
        let e = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        assert!(e < 1e-3, "{head:?} parameter JVP rel err {e}: {analytic} vs {numeric}");
    }
}

#[test]
fn saturated_gates_match_ablation() {
    let with = DabcModel::new(small_config(), 31).unwrap();
    let mut forced = with.clone();
    for p in forced.params_mut().iter_mut() {
        if p.name.contains(".gate2.weight") {
            p.value.data_mut().fill(0.0);
        } else if p.name.contains(".gate2.bias") {
            p.value.data_mut().fill(40.0);
        }
    }
    let mut without = DabcModel::new(
        ModelConfig {
            attention_enabled: false,
            ..small_config()
        },
        0,
    )
    .unwrap();
    without.params_mut().copy_from(forced.params()).unwrap();
    let image = random_tensor([2, 3, 32, 64], &mut rng(32));
    let a = forced.forward(&image, Mode::Eval).unwrap();
    let b = without.forward(&image, Mode::Eval).unwrap();
    assert_eq!(a.prediction, b.prediction);
    assert!(b.attention.is_empty());
    assert!(a.attention.iter().all(|r| r.gate.iter().all(|&g| g == 1.0)));
}

#[test]
fn parameter_count_depends_only_on_config() {
    let cfg = small_config();
    let a = DabcModel::new(cfg.clone(), 1).unwrap().parameter_count();
    let b = DabcModel::new(cfg.clone(), 2).unwrap().parameter_count();
    assert_eq!(a, b);
    let reg = |n| {
        let mut c = ModelConfig::regression();
        c.stage_widths = cfg.stage_widths;
        c.fusion_width = cfg.fusion_width;
        c.num_classes = n;
        c
    };
    assert_eq!(DabcModel::new(reg(1), 1).unwrap().parameter_count(), {
        let mut c = reg(1);
        c.dropout_rate = 0.1;
        DabcModel::new(c, 9).unwrap().parameter_count()
    });
    assert!(DabcModel::new(reg(7), 1).is_err());
}

#[test]
fn config_validation() {
    let spec = QuantizationSpec::default();
    let mut c = ModelConfig::classification(&spec);
    assert!(c.validate().is_ok());
    assert!(c.check_spec(&spec).is_ok());
    c.num_classes = 10;
    assert!(c.check_spec(&spec).is_err());
    c.stage_widths[2] = 0;
    assert!(c.validate().is_err());
    let mut c = ModelConfig::regression();
    assert_eq!(c.output_channels(), 1);
    assert!(!c.attention_enabled);
    c.dropout_rate = 1.0;
    assert!(c.validate().is_err());
    let full = ModelConfig::full_scale(&spec);
    assert_eq!((full.top_width(), full.fusion_width), (512, 256));
}

#[test]
fn regression_depth_is_clamped_power_of_ten() {
    let spec = QuantizationSpec::default();
    let t = Tensor::from_vec([1, 1, 1, 3], vec![0.0, 5.0, -3.0]).unwrap();
    let maps = Prediction::LogDepth(t).depth_maps(&spec).unwrap();
    assert_eq!(maps[0].data(), &[1.0, 80.0, 0.25]);
}

mod checkpoints {
    use super::*;

    fn sample() -> Checkpoint {
        let mut model = DabcModel::new(small_config(), 41).unwrap();
        jitter(model.params_mut(), 42);
        Checkpoint::from_model(
            &model,
            &QuantizationSpec::new(0.25, 80.0, 4).unwrap(),
            ScheduleState { epoch: 3, lr: 1e-4 },
            41,
        )
        .with_geometry(crate::data::Geometry::toy())
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes(Precision::F64).unwrap()).unwrap();
        assert_eq!(back, c);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        c.save(&path, Precision::F64).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn f32_round_trip_rounds_once() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes(Precision::F32).unwrap()).unwrap();
        for ((_, a), (_, b)) in back.params.iter().zip(c.params.iter()) {
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn restored_model_predicts_identically() {
        let c = sample();
        let model = c.to_model().unwrap();
        let image = random_tensor([1, 3, 32, 32], &mut rng(43));
        let mut original = DabcModel::new(c.config.clone(), 0).unwrap();
        original.load_params(&c.params).unwrap();
        assert_eq!(
            model.forward(&image, Mode::Eval).unwrap().prediction,
            original.forward(&image, Mode::Eval).unwrap().prediction
        );
    }

    #[test]
    fn rejects_corruption() {
        let c = sample();
        let bytes = c.to_bytes(Precision::F64).unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());

        let mut wrong = c.clone();
        wrong.config.fusion_width = 6;
        assert!(matches!(Checkpoint::from_bytes(&wrong.to_bytes(Precision::F64).unwrap()), Err(Error::Shape(_)) | Err(Error::Checkpoint(_))));
        assert!(matches!(
            Checkpoint::load("/nonexistent/m.ckpt"),
            Err(Error::MissingCheckpoint { .. })
        ));
    }
}

use dacad::adapt::{evaluate, pretrain, source_only_train, TrainConfig};
use dacad::data::synthetic::{gen_gaussian_shift, gen_two_moons_shift};
use dacad::{Architecture, ModelParams};

fn arch(k: usize) -> Architecture {
    Architecture {
        input_dim: 2,
        encoder_widths: vec![32, 8],
        classifier_hidden: vec![],
        num_classes: k,
    }
}

fn cfg() -> TrainConfig {
    TrainConfig {
        pretrain_steps: 400,
        iterations: 2,
        alternations: 5,
        adam: dacad::numerics::AdamConfig {
            learning_rate: 1e-2,
            ..Default::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn half_turn_swaps_two_classes() {
    let pair = gen_gaussian_shift(100, 2, 2, 180.0, 3.0, 0.3, 0).unwrap();
    let init = ModelParams::init(&arch(2), 0).unwrap();
    let (model, _) = pretrain(&pair.source, &init, &cfg()).unwrap();
    assert!(evaluate(&model, &pair.source).unwrap().accuracy > 0.99);
    let acc = evaluate(&model, &pair.target).unwrap().accuracy;
    assert!(acc < 0.02, "{acc}");
}

#[test]
fn rotated_mixture_loses_accuracy_without_adaptation() {
    let pair = gen_gaussian_shift(200, 4, 2, 30.0, 3.0, 0.8, 3).unwrap();
    let init = ModelParams::init(&arch(4), 0).unwrap();
    let c = cfg();
    let (pre, _) = pretrain(&pair.source, &init, &c).unwrap();
    let (model, _) = source_only_train(&pair.source, &pair.target.unlabeled(), &pre, &c).unwrap();
    let src = evaluate(&model, &pair.source).unwrap().accuracy;
    let tgt = evaluate(&model, &pair.target).unwrap().accuracy;
    assert!(tgt > 0.25 && tgt < src, "source {src}, target {tgt}");
}

#[test]
fn moons_are_learnable() {
    let pair = gen_two_moons_shift(400, 20.0, [0.0, 0.0], 0.1, 1).unwrap();
    let init = ModelParams::init(&arch(2), 0).unwrap();
    let (model, _) = pretrain(&pair.source, &init, &cfg()).unwrap();
    let acc = evaluate(&model, &pair.source).unwrap().accuracy;
    assert!(acc >= 0.95, "{acc}");
}

use camtrap_core::model::{Example, HeadLayout, HeadMode, Network, Target};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random_layout(rng: &mut impl Rng) -> HeadLayout {
    match rng.random_range(0..3) {
        0 => HeadLayout::binary(),
        1 => HeadLayout::multitask_with(rng.random_range(2..5), rng.random_range(2..5), rng.random_range(0..3)),
        _ => HeadLayout::one_stage(rng.random_range(1..5)),
    }
}

fn random_target(layout: &HeadLayout, rng: &mut impl Rng) -> Target {
    let classes = layout
        .heads
        .iter()
        .enumerate()
        .map(|(h, &k)| {
            // Attribute heads are sometimes masked.
            if layout.mode == HeadMode::Multitask && h >= 2 && rng.random_bool(0.3) {
                None
            } else {
                Some(rng.random_range(0..k))
            }
        })
        .collect();
    let weights = layout.heads.iter().map(|_| rng.random_range(0.2..2.0)).collect();
    Target { classes, weights }
}

/// Checks every parameter against a central difference of the mean loss.
fn check(net: &Network, batch: &[Example]) -> f64 {
    let refs: Vec<&Example> = batch.iter().collect();
    let analytic = net.gradients(&refs, None).unwrap().gradients;
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for l in 0..net.layers().len() {
        let (rows, cols) = net.layers()[l].weights.dim();
        for r in 0..rows {
            for c in 0..cols {
                let w0 = net.layers()[l].weights[[r, c]];
                probe.layers_mut()[l].weights[[r, c]] = w0 + EPS;
                let up = probe.mean_loss(&refs).unwrap();
                probe.layers_mut()[l].weights[[r, c]] = w0 - EPS;
                let down = probe.mean_loss(&refs).unwrap();
                probe.layers_mut()[l].weights[[r, c]] = w0;
                let numeric = (up - down) / (2.0 * EPS);
                worst = worst.max(rel_err(analytic.layers[l].weights[[r, c]], numeric));
            }
            let b0 = net.layers()[l].bias[r];
            probe.layers_mut()[l].bias[r] = b0 + EPS;
            let up = probe.mean_loss(&refs).unwrap();
            probe.layers_mut()[l].bias[r] = b0 - EPS;
            let down = probe.mean_loss(&refs).unwrap();
            probe.layers_mut()[l].bias[r] = b0;
            let numeric = (up - down) / (2.0 * EPS);
            worst = worst.max(rel_err(analytic.layers[l].bias[r], numeric));
        }
    }
    worst
}

#[test]
fn two_layer_five_features_three_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let layout = HeadLayout::one_stage(2);
    let net = Network::new(5, &[6], layout.clone(), &mut rng).unwrap();
    let batch: Vec<Example> = (0..4)
        .map(|_| Example {
            features: (0..5).map(|_| rng.random_range(-1.5..1.5)).collect(),
            target: random_target(&layout, &mut rng),
        })
        .collect();
    let worst = check(&net, &batch);
    assert!(worst <= TOL, "relative error {worst}");
}

#[test]
fn random_configurations_match_finite_differences() {
    let mut worst_overall: f64 = 0.0;
    for seed in 0..120u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let layout = random_layout(&mut rng);
        let input = rng.random_range(1..6);
        let depth = rng.random_range(0..3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..6)).collect();
        let net = Network::new(input, &hidden, layout.clone(), &mut rng).unwrap();
        let batch: Vec<Example> = (0..rng.random_range(1..5))
            .map(|_| Example {
                features: (0..input).map(|_| rng.random_range(-2.0..2.0)).collect(),
                target: random_target(&layout, &mut rng),
            })
            .collect();
        let worst = check(&net, &batch);
        assert!(
            worst <= TOL,
            "seed {seed}: relative error {worst} for {layout:?}, hidden {hidden:?}"
        );
        worst_overall = worst_overall.max(worst);
    }
    assert!(worst_overall <= TOL);
}

#[test]
fn clamp_bounds_output_layer_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let layout = HeadLayout::one_stage(3);
    let mut net = Network::new(4, &[8], layout.clone(), &mut rng).unwrap();
    for l in net.layers_mut() {
        l.weights.mapv_inplace(|w| w * 5.0);
    }
    let batch: Vec<Example> = (0..16)
        .map(|_| Example {
            features: (0..4).map(|_| rng.random_range(-3.0..3.0)).collect(),
            target: random_target(&layout, &mut rng),
        })
        .collect();
    let refs: Vec<&Example> = batch.iter().collect();
    let free = net.gradients(&refs, None).unwrap();
    let clamped = net.gradients(&refs, Some(0.01)).unwrap();
    assert!(free.gradients.max_abs_output() > 0.01);
    assert!(clamped.gradients.max_abs_output() <= 0.01);
    assert_eq!(free.gradients.layers[0], clamped.gradients.layers[0]);
}

#[test]
fn non_finite_input_is_numeric_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layout = HeadLayout::binary();
    let net = Network::new(2, &[3], layout.clone(), &mut rng).unwrap();
    let ex = Example {
        features: vec![f64::NAN, 0.0],
        target: random_target(&layout, &mut rng),
    };
    assert!(matches!(
        net.gradients(&[&ex], None),
        Err(camtrap_core::Error::Numeric(_))
    ));
}

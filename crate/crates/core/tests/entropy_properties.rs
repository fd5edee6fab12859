use entropynas_core::entropy::{multiscale_entropy, multiscale_entropy_with, stage_entropy};
use entropynas_core::forward::{rescaled_forward, ForwardError};
use entropynas_core::tensor::gaussian_input;
use entropynas_core::{zoo, ArchitectureSpec, BlockSpec, MsepScorer, MsepWeights, RescaleRule, Resolution, Scorer, SeededRng};

/// Random shallow net (not necessarily five-stage), at most `max_convs` main-path convs.
fn shallow_net(rng: &mut SeededRng, max_convs: usize, max_width: usize) -> ArchitectureSpec {
    let width = |rng: &mut SeededRng| 8 * (1 + rng.below(max_width / 8));
    let mut blocks = vec![BlockSpec::conv(3, 3, width(rng), 1 + rng.below(2), 1)];
    let mut convs = 1;
    while convs < max_convs {
        let cin = blocks.last().unwrap().out_channels;
        let k = [3, 5][rng.below(2)];
        let stride = 1 + rng.below(2);
        let block = match rng.below(3) {
            0 => BlockSpec::conv(k, cin, width(rng), stride, 1),
            1 if convs + 6 <= max_convs => BlockSpec::res_block(k, cin, width(rng), stride, width(rng), 1),
            _ if convs + 3 <= max_convs => BlockSpec::mobile(k, cin, width(rng), stride, [1, 3, 6][rng.below(3)], 1),
            _ => break,
        };
        convs += block.depth();
        blocks.push(block);
    }
    ArchitectureSpec::new(blocks)
}

fn final_entropy_per_element(arch: &ArchitectureSpec, side: usize, seed: u64, rule: RescaleRule) -> Result<f64, ForwardError> {
    let mut rng = SeededRng::new(seed, 0);
    let x = gaussian_input(3, side, side, &mut rng);
    let out = rescaled_forward(arch, x, &mut rng, rule)?;
    let h = stage_entropy(&out.output, out.output_log_gamma_sum).unwrap();
    Ok(h / out.output.numel() as f64)
}

#[test]
fn compensation_identity_holds_for_any_gamma() {
    let mut rng = SeededRng::new(11, 0);
    for net in 0..20 {
        let arch = shallow_net(&mut rng, 6, 64);
        let plain = final_entropy_per_element(&arch, 32, net, RescaleRule::Constant(1.0)).unwrap();
        for rule in [RescaleRule::Rms, RescaleRule::Norm, RescaleRule::Uniform { lo: 0.5, hi: 2.0, seed: net }] {
            let rescaled = final_entropy_per_element(&arch, 32, net, rule).unwrap();
            assert!((plain - rescaled).abs() < 1e-3, "net {net} {rule:?}: {plain} vs {rescaled}");
        }
    }
}

#[test]
fn score_is_invariant_to_rescaler_on_shallow_nets() {
    let arch = ArchitectureSpec::new(vec![
        BlockSpec::conv(3, 3, 16, 2, 1),
        BlockSpec::conv(3, 16, 24, 2, 1),
        BlockSpec::conv(5, 24, 32, 2, 1),
        BlockSpec::conv(3, 32, 48, 2, 1),
        BlockSpec::conv(3, 48, 64, 2, 1),
    ]);
    let w = MsepWeights::default();
    let score = |rule| {
        let mut rng = SeededRng::new(3, 3);
        multiscale_entropy_with(&arch, &w, Resolution::square(64), &mut rng, rule).unwrap().score
    };
    let base = score(RescaleRule::Constant(1.0));
    for rule in [RescaleRule::Rms, RescaleRule::Norm] {
        let s = score(rule);
        assert!(((s - base) / base).abs() < 1e-3, "{rule:?}: {s} vs {base}");
    }
}

#[test]
fn single_pointwise_conv_matches_half_log_fan_in() {
    for cin in [4usize, 16, 64] {
        let arch = ArchitectureSpec::new(vec![BlockSpec { kernel: 1, ..BlockSpec::conv(3, cin, 16, 1, 1) }]);
        let seeds = 100;
        let mut sum = 0.0;
        for seed in 0..seeds {
            let mut rng = SeededRng::new(seed, 0);
            let x = gaussian_input(cin, 16, 16, &mut rng);
            let out = rescaled_forward(&arch, x, &mut rng, RescaleRule::Constant(1.0)).unwrap();
            sum += stage_entropy(&out.output, 0.0).unwrap() / out.output.numel() as f64;
        }
        let mean = sum / seeds as f64;
        let expected = 0.5 * (cin as f64).ln();
        assert!(((mean - expected) / expected).abs() < 0.1, "c_in {cin}: {mean} vs {expected}");
    }
}

/// Plug-in estimate from an equal-width histogram.
fn histogram_entropy(samples: &[f64], bins: usize) -> f64 {
    let (lo, hi) = samples.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in samples {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let n = samples.len() as f64;
    counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 / n).map(|p| -p * (p / width).ln()).sum()
}

#[test]
fn final_maps_do_not_beat_the_gaussian_bound() {
    let mut rng = SeededRng::new(5, 5);
    for net in 0..5 {
        let mut arch = shallow_net(&mut rng, 8, 32);
        for b in &mut arch.blocks {
            b.stride = 1;
        }
        arch.blocks.last_mut().unwrap().out_channels = 32;
        let mut r = SeededRng::new(net, 1);
        let x = gaussian_input(3, 64, 64, &mut r);
        let out = rescaled_forward(&arch, x, &mut r, RescaleRule::Rms).unwrap();
        let samples: Vec<f64> = out.output.data().iter().map(|&v| f64::from(v)).collect();
        assert!(samples.len() >= 100_000);
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let bound = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln();
        let estimate = histogram_entropy(&samples, 50);
        assert!(estimate <= bound + 0.1, "net {net}: {estimate} > {bound}");
    }
}

#[test]
fn hundred_layer_vanilla_net_stays_finite() {
    let arch = ArchitectureSpec::new(vec![BlockSpec::conv(3, 3, 256, 1, 100)]);
    let mut rng = SeededRng::new(1, 0);
    let x = gaussian_input(3, 8, 8, &mut rng);
    let out = rescaled_forward(&arch, x.clone(), &mut rng, RescaleRule::Rms).unwrap();
    assert!(out.output.is_finite());
    assert_eq!(out.ledger.len(), 100);
    assert!(out.ledger.gammas().iter().all(|g| g.is_finite() && *g > 0.0));

    let mut rng = SeededRng::new(1, 0);
    let _ = gaussian_input(3, 8, 8, &mut rng);
    let err = rescaled_forward(&arch, x, &mut rng, RescaleRule::Constant(1.0)).unwrap_err();
    assert!(matches!(err, ForwardError::NonFinite { .. }));
}

fn seed_averaged(scorer: &MsepScorer, arch: &ArchitectureSpec, seeds: u64) -> f64 {
    (0..seeds).map(|s| scorer.score(arch, s, 0).unwrap()).sum::<f64>() / seeds as f64
}

#[test]
fn widening_every_stage_does_not_lower_the_score() {
    let net = |w: usize| {
        ArchitectureSpec::new(vec![
            BlockSpec::conv(3, 3, w, 2, 1),
            BlockSpec::res_block(3, w, 2 * w, 2, w, 1),
            BlockSpec::res_block(3, 2 * w, 4 * w, 2, w, 1),
            BlockSpec::res_block(3, 4 * w, 8 * w, 2, 2 * w, 1),
            BlockSpec::res_block(3, 8 * w, 8 * w, 2, 2 * w, 1),
        ])
    };
    let scorer = MsepScorer::new(MsepWeights::default(), Resolution::square(64));
    let mut last = f64::NEG_INFINITY;
    for w in [8, 16, 32] {
        let z = seed_averaged(&scorer, &net(w), 5);
        assert!(z >= last, "width {w}: {z} < {last}");
        last = z;
    }
}

#[test]
fn searched_medium_outscores_initial_structure() {
    let scorer = MsepScorer::new(MsepWeights::default(), Resolution::square(384));
    let medium = seed_averaged(&scorer, &zoo::searched_medium(), 5);
    let initial = seed_averaged(&scorer, &zoo::initial_structure(), 5);
    assert!(medium > initial, "{medium} <= {initial}");
}

#[test]
fn argmax_is_invariant_to_alpha_scale() {
    let archs = [zoo::initial_structure(), zoo::searched_small(), zoo::resnet50()];
    let pick = |alpha: [f64; 5]| {
        let w = MsepWeights::new(alpha).unwrap();
        let scores: Vec<f64> = archs
            .iter()
            .map(|a| multiscale_entropy(a, &w, Resolution::square(64), &mut SeededRng::new(0, 0)).unwrap().score)
            .collect();
        (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap()
    };
    assert_eq!(pick([0.0, 0.0, 1.0, 1.0, 6.0]), pick([0.0, 0.0, 0.125, 0.125, 0.75]));
}

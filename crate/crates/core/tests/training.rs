//! End-to-end training behaviour and per-loss gradient checks.

use mlfsl::episodes::EpisodeSampler;
use mlfsl::evaluation::random_ranking_baseline;
use mlfsl::heads::HeadKind;
use mlfsl::learner::Learner;
use mlfsl::rng::{seeded, stream};
use mlfsl::run::{self, RunConfig, TrainLogRow};
use mlfsl::selftest::{loss_gradient_error, Fault, GRADIENT_TOLERANCE, LOSS_CASES};
use mlfsl::synth::SynthConfig;

fn small_run(head: HeadKind, episodes: usize) -> RunConfig {
    RunConfig {
        head,
        way: 3,
        shot: 2,
        episodes,
        train_fraction: 0.5,
        val_fraction: 0.0,
        synth: SynthConfig {
            num_classes: 10,
            max_labels: 2,
            ..SynthConfig::default()
        },
        ..RunConfig::default()
    }
}

fn mean_loss(rows: &[TrainLogRow]) -> f64 {
    rows.iter().map(|r| r.loss.total).sum::<f64>() / rows.len() as f64
}

#[test]
fn moving_average_loss_falls_within_200_episodes() {
    // Five queries per episode on overlapping clusters, so learning shows
    // through the episode-to-episode noise.
    for head in [HeadKind::Proto, HeadKind::Relation] {
        let cfg = RunConfig {
            way: 5,
            shot: 1,
            queries: Some(5),
            synth: SynthConfig {
                num_classes: 20,
                separation: 3.0,
                ..small_run(head, 200).synth
            },
            ..small_run(head, 200)
        };
        let out = run::train(&cfg).unwrap();
        assert_eq!(out.log.len(), 200);
        let first = mean_loss(&out.log[..50]);
        let last = mean_loss(&out.log[150..]);
        assert!(last < first, "{head}: {first:.4} -> {last:.4}");
    }
}

#[test]
fn propagation_loss_falls_over_2000_episodes() {
    let out = run::train(&small_run(HeadKind::Lpn, 2000)).unwrap();
    let first = mean_loss(&out.log[..500]);
    let last = mean_loss(&out.log[1500..]);
    assert!(last < first, "{first:.4} -> {last:.4}");
}

#[test]
fn untrained_model_scores_like_random_ranking_without_signal() {
    let cfg = RunConfig {
        way: 10,
        shot: 1,
        queries: Some(5),
        eval_episodes: 300,
        train_fraction: 0.0,
        val_fraction: 0.0,
        synth: SynthConfig {
            num_classes: 20,
            separation: 1e-9,
            max_labels: 2,
            ..SynthConfig::default()
        },
        ..RunConfig::default()
    };
    let data = cfg.load_dataset().unwrap();
    let learner = Learner::new(cfg.model(data.feature_dim().unwrap()), &mut seeded(1));
    let sampler = EpisodeSampler::new(&data);
    let mut aps = Vec::new();
    let mut positives = Vec::new();
    for i in 0..cfg.eval_episodes {
        let ep = sampler.sample(cfg.shape(), &mut stream(9, i as u64)).unwrap();
        let (result, _) = learner.score_episode(&ep).unwrap();
        aps.extend(result.average_precisions().unwrap());
        positives.extend(result.true_counts());
    }
    let n = aps.len() as f64;
    let map = aps.iter().sum::<f64>() / n;
    let sd = (aps.iter().map(|a| (a - map).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let (base, base_se) = random_ranking_baseline(&positives, 10, 20_000, &mut seeded(2));
    let margin = 1.96 * ((sd * sd / n) + base_se * base_se).sqrt();
    assert!((map - base).abs() <= margin, "mAP {map:.4} vs random {base:.4} ± {margin:.4}");
}

#[test]
fn every_loss_passes_its_gradient_check() {
    for case in LOSS_CASES {
        let err = loss_gradient_error(case, 3, 17, None).unwrap();
        assert!(err < GRADIENT_TOLERANCE, "{}: {err:e}", case.name);
    }
}

#[test]
fn gradient_check_catches_a_sign_flip() {
    let err = loss_gradient_error(LOSS_CASES[0], 2, 17, Some(Fault::FlipPrototypeGradient)).unwrap();
    assert!(err > GRADIENT_TOLERANCE);
}

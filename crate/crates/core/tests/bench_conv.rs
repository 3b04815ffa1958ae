use anct_core::data::{compute_dataset_stats, make_folds, synth_samples, SynthConfig};
use anct_core::eval::evaluate;
use anct_core::model::{ChannelPreset, ModelConfig};
use anct_core::train::{train_model, TrainConfig};
use std::time::Instant;

#[test]
fn probe_ablation_direction() {
    let samples = synth_samples(&SynthConfig { count: 500, seed: 7, rater_count: 1 }).unwrap();
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let split = make_folds(&ids, 7).unwrap();
    let test_ids: std::collections::HashSet<String> = split.test_ids(0).into_iter().collect();
    let train: Vec<_> = samples.iter().filter(|s| !test_ids.contains(&s.id)).cloned().collect();
    let test: Vec<_> = samples.iter().filter(|s| test_ids.contains(&s.id)).cloned().collect();
    let stats = compute_dataset_stats(train.iter().map(|s| &s.volume.slices)).unwrap();

    let mk = |no_attention: bool, seed: u64| TrainConfig {
        epochs: 60,
        seed,
        model: ModelConfig {
            preset: ChannelPreset::Tiny,
            ..if no_attention { ModelConfig::no_attention() } else { ModelConfig::default() }
        },
        ..TrainConfig::default()
    };

    // two threads: full seed 8 alongside baseline seed 7, etc.
    for (tag, cfg_a, cfg_b) in [
        ("full s8 / base s7", mk(false, 8), mk(true, 7)),
        ("full s9 / base s8", mk(false, 9), mk(true, 8)),
        ("base s9 / full s7check", mk(true, 9), mk(false, 7)),
    ] {
        let t0 = Instant::now();
        let (ra, rb) = std::thread::scope(|s| {
            let ha = s.spawn(|| {
                let (m, _) = train_model::<f32>(&train, &stats, &cfg_a).unwrap();
                evaluate(&m, &stats, &test).unwrap().mean_mae
            });
            let hb = s.spawn(|| {
                let (m, _) = train_model::<f32>(&train, &stats, &cfg_b).unwrap();
                evaluate(&m, &stats, &test).unwrap().mean_mae
            });
            (ha.join().unwrap(), hb.join().unwrap())
        });
        eprintln!("{tag}: {:.4} / {:.4}  ({:?})", ra, rb, t0.elapsed());
    }
}

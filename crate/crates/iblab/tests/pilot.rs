// Scratch pilot for tuning benchmark defaults; not part of the suite.
// Run with: cargo test -p iblab --test pilot -- --ignored --nocapture

use iblab::datagen::{generate_symmetric_rule, GroupSpec};
use iblab::infoplane::{
    detect_compression_onset, detect_snr_transition, dpi_check, estimate_layer_mi, BinningConfig,
    EnumerableTask, OnsetConfig,
};
use iblab::net::{gradient_snr_series, train, Dataset, NetworkSpec, TrainConfig};

#[test]
#[ignore]
fn pilot_two_phase() {
    let t0 = std::time::Instant::now();
    let (patterns, rule) = generate_symmetric_rule::<f64>(1, &GroupSpec::default_symmetric()).unwrap();
    println!("task MI = {:.4}, p1 = {:.4}", rule.mutual_information(), rule.p_y1());
    let data = Dataset::from_rule(&patterns, &rule, 1);
    let spec = NetworkSpec::benchmark_default(1);
    let config = TrainConfig {
        learning_rate: 0.1,
        batch_size: 256,
        epochs: 8000,
        train_fraction: 0.85,
        snapshot_schedule: Vec::new(),
    };
    let run = train(&spec, &config, &data).unwrap();
    println!(
        "trained in {:.1?}; final train_err {:.4} test_err {:.4} loss {:.4}",
        t0.elapsed(),
        run.train_error.last().unwrap(),
        run.test_error.last().unwrap(),
        run.train_loss.last().unwrap()
    );
    let task = EnumerableTask::from_rule(&patterns, &rule);
    let t1 = std::time::Instant::now();
    let traj = estimate_layer_mi(&run, &task, &BinningConfig::default()).unwrap();
    println!("MI estimation in {:.1?}, clipped {}", t1.elapsed(), traj.clipped);
    for l in 0..traj.n_layers() {
        let series = &traj.layers[l];
        let peak = series.iter().map(|p| p.i_xt).fold(f64::NEG_INFINITY, f64::max);
        let last = series.last().unwrap();
        println!(
            "layer {l}: peak i_xt {:.3}, final i_xt {:.3}, final i_ty {:.3}, onset {:?}",
            peak,
            last.i_xt,
            last.i_ty,
            detect_compression_onset(&traj, l, &OnsetConfig::default()).unwrap()
        );
    }
    let dpi = dpi_check(&traj).unwrap();
    println!("dpi: x {:.3e} y {:.3e} at {:?}/{:?}", dpi.max_violation_x, dpi.max_violation_y, dpi.worst_x_at, dpi.worst_y_at);
    for l in 0..run.spec.n_layers() {
        let snr = gradient_snr_series(&run, l, Some(5)).unwrap();
        let trans = detect_snr_transition(&snr).unwrap();
        let first = snr.iter().find_map(|&(_, v)| v).unwrap_or(0.0);
        let last = snr.iter().rev().find_map(|&(_, v)| v).unwrap_or(0.0);
        println!("layer {l}: snr first {:.3} last {:.4} transition {:?}", first, last, trans);
    }
    // full i_xt series for the deepest two hidden layers
    for l in [3usize, 4] {
        let xs: Vec<String> =
            traj.layers[l].iter().map(|p| format!("{}:{:.2}", p.iteration, p.i_xt)).collect();
        println!("layer {l} i_xt series: {}", xs.join(" "));
    }
    println!("total {:.1?}", t0.elapsed());
}

#[test]
#[ignore]
fn pilot_batch_correlation() {
    let (patterns, rule) = generate_symmetric_rule::<f64>(1, &GroupSpec::default_symmetric()).unwrap();
    let data = Dataset::from_rule(&patterns, &rule, 1);
    let task = EnumerableTask::from_rule(&patterns, &rule);
    for batch in [32usize, 128] {
        let t0 = std::time::Instant::now();
        let spec = NetworkSpec::benchmark_default(2);
        let config = TrainConfig {
            learning_rate: 0.1,
            batch_size: batch,
            epochs: 3000,
            train_fraction: 0.85,
            snapshot_schedule: Vec::new(),
        };
        let run = train(&spec, &config, &data).unwrap();
        let traj = estimate_layer_mi(&run, &task, &BinningConfig::default()).unwrap();
        let snr = gradient_snr_series(&run, 4, Some(5)).unwrap();
        let trans = detect_snr_transition(&snr).unwrap();
        let onset = detect_compression_onset(&traj, 4, &OnsetConfig::default()).unwrap();
        println!(
            "batch {batch}: steps/epoch {} snr_trans {:?} onset {:?} ({:.1?})",
            run.steps_per_epoch,
            trans,
            onset,
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn pilot_tune() {
    use rayon::prelude::*;
    let (patterns, rule) =
        generate_symmetric_rule::<f64>(1, &GroupSpec::default_symmetric()).unwrap();
    let data = Dataset::from_rule(&patterns, &rule, 1);
    let task = EnumerableTask::from_rule(&patterns, &rule);
    let configs: Vec<(f64, usize, u64, f64)> = vec![
        (0.10, 256, 1, 1.0),
        (0.15, 128, 1, 1.0),
        (0.10, 128, 2, 1.0),
        (0.20, 256, 3, 1.0),
        (0.10, 256, 1, 0.5),
        (0.15, 256, 2, 0.5),
        (0.10, 128, 3, 0.5),
    ];
    let results: Vec<String> = configs
        .par_iter()
        .map(|&(lr, batch, seed, init)| {
            let spec = NetworkSpec {
                init_weight_std: init,
                seed,
                ..NetworkSpec::benchmark_default(seed)
            };
            let config = TrainConfig {
                learning_rate: lr,
                batch_size: batch,
                epochs: 8000,
                train_fraction: 0.85,
                snapshot_schedule: Vec::new(),
            };
            let run = train(&spec, &config, &data).unwrap();
            let traj = estimate_layer_mi(&run, &task, &BinningConfig::default()).unwrap();
            let onset = |l: usize| {
                detect_compression_onset(&traj, l, &OnsetConfig::default()).unwrap()
            };
            let drop = |l: usize| {
                let s = &traj.layers[l];
                let peak = s.iter().map(|p| p.i_xt).fold(f64::NEG_INFINITY, f64::max);
                peak - s.last().unwrap().i_xt
            };
            let snr = gradient_snr_series(&run, 4, Some(5)).unwrap();
            let trans = detect_snr_transition(&snr).unwrap();
            format!(
                "lr {lr} batch {batch} seed {seed} init {init}: test_err {:.4} ity_out {:.3} drops l3 {:.2} l4 {:.2} onsets {:?}/{:?} snr_t {:?} peak_iter_l4 {:?}",
                run.test_error.last().unwrap(),
                traj.layers[5].last().unwrap().i_ty,
                drop(3),
                drop(4),
                onset(3),
                onset(4),
                trans,
                traj.layers[4]
                    .iter()
                    .max_by(|a, b| a.i_xt.partial_cmp(&b.i_xt).unwrap())
                    .map(|p| p.iteration)
            )
        })
        .collect();
    for r in results {
        println!("{r}");
    }
}

#[test]
#[ignore]
fn pilot_batch_sweep() {
    use iblab::infoplane::correlate_transitions;
    use rayon::prelude::*;
    let (patterns, rule) =
        generate_symmetric_rule::<f64>(1, &GroupSpec::default_symmetric()).unwrap();
    let data = Dataset::from_rule(&patterns, &rule, 1);
    let task = EnumerableTask::from_rule(&patterns, &rule);
    let runs: Vec<(usize, usize)> =
        vec![(8, 600), (16, 1000), (32, 1600), (64, 2500), (128, 4000)];
    let pairs: Vec<Option<(f64, f64)>> = runs
        .par_iter()
        .map(|&(batch, epochs)| {
            let spec = NetworkSpec {
                init_weight_std: 0.5,
                ..NetworkSpec::benchmark_default(2)
            };
            let config = TrainConfig {
                learning_rate: 0.1,
                batch_size: batch,
                epochs,
                train_fraction: 0.85,
                snapshot_schedule: Vec::new(),
            };
            let run = train(&spec, &config, &data).unwrap();
            let traj = estimate_layer_mi(&run, &task, &BinningConfig::default()).unwrap();
            let snr = gradient_snr_series(&run, 4, Some(5)).unwrap();
            let trans = detect_snr_transition(&snr).unwrap();
            let onset = detect_compression_onset(&traj, 4, &OnsetConfig::default()).unwrap();
            println!(
                "batch {batch}: epochs {epochs} steps/ep {} trans {:?} onset {:?} test_err {:.3} ity {:.3}",
                run.steps_per_epoch, trans, onset,
                run.test_error.last().unwrap(),
                traj.layers[5].last().unwrap().i_ty
            );
            match (onset, trans) {
                (Some(o), Some(t)) => Some((o as f64, t as f64)),
                _ => None,
            }
        })
        .collect();
    let good: Vec<(f64, f64)> = pairs.into_iter().flatten().collect();
    if good.len() >= 4 {
        let c = correlate_transitions(&good).unwrap();
        println!("pairs {:?} r = {:.3} slope {:.3}", good, c.pearson_r, c.slope);
    } else {
        println!("only {} valid pairs", good.len());
    }
}

#[test]
#[ignore]
fn pilot_depth_sweep() {
    use rayon::prelude::*;
    let (patterns, rule) =
        generate_symmetric_rule::<f64>(1, &GroupSpec::default_symmetric()).unwrap();
    let data = Dataset::from_rule(&patterns, &rule, 1);
    let depths: Vec<usize> = vec![1, 2, 3, 4, 5];
    let results: Vec<String> = depths
        .par_iter()
        .map(|&k| {
            let hidden = [10usize, 7, 5, 4, 3];
            let mut widths = vec![12];
            widths.extend_from_slice(&hidden[..k]);
            widths.push(2);
            let spec = NetworkSpec {
                layer_widths: widths,
                activation: iblab::net::Activation::Tanh,
                init_weight_std: 1.0,
                init_bias_std: 0.0,
                seed: 2,
            };
            let config = TrainConfig {
                learning_rate: 0.1,
                batch_size: 128,
                epochs: 6000,
                train_fraction: 0.85,
                snapshot_schedule: vec![0],
            };
            let run = train(&spec, &config, &data).unwrap();
            let conv = run.error_saturation_iteration(0.02);
            format!(
                "depth {k}: converged@98% {:?} final train_err {:.4}",
                conv,
                run.train_error.last().unwrap()
            )
        })
        .collect();
    for r in results {
        println!("{r}");
    }
}

#[test]
#[ignore]
fn pilot_lr_batch_matrix() {
    use rayon::prelude::*;
    let (patterns, rule) =
        generate_symmetric_rule::<f64>(1, &GroupSpec::default_symmetric()).unwrap();
    let data = Dataset::from_rule(&patterns, &rule, 1);
    let task = EnumerableTask::from_rule(&patterns, &rule);
    let combos: Vec<(f64, usize)> =
        vec![(0.05, 8), (0.05, 128), (0.1, 8), (0.1, 128), (0.02, 8), (0.02, 128)];
    let out: Vec<String> = combos
        .par_iter()
        .map(|&(lr, batch)| {
            let spec =
                NetworkSpec { init_weight_std: 0.5, ..NetworkSpec::benchmark_default(1) };
            let config = TrainConfig {
                learning_rate: lr,
                batch_size: batch,
                epochs: 6000,
                train_fraction: 0.85,
                snapshot_schedule: Vec::new(),
            };
            let run = train(&spec, &config, &data).unwrap();
            let traj = estimate_layer_mi(&run, &task, &BinningConfig::default()).unwrap();
            let snr = gradient_snr_series(&run, 4, Some(5)).unwrap();
            let trans = detect_snr_transition(&snr).unwrap();
            let onset = detect_compression_onset(&traj, 4, &OnsetConfig::default()).unwrap();
            format!(
                "lr {lr} batch {batch}: trans {:?} onset {:?} train_err {:.3} test_err {:.3} ity {:.3}",
                trans,
                onset,
                run.train_error.last().unwrap(),
                run.test_error.last().unwrap(),
                traj.layers[5].last().unwrap().i_ty
            )
        })
        .collect();
    for r in out {
        println!("{r}");
    }
}

#[test]
#[ignore]
fn pilot_small_lr() {
    use rayon::prelude::*;
    let (patterns, rule) =
        generate_symmetric_rule::<f64>(1, &GroupSpec::default_symmetric()).unwrap();
    let data = Dataset::from_rule(&patterns, &rule, 1);
    let task = EnumerableTask::from_rule(&patterns, &rule);
    let combos: Vec<(f64, usize, usize)> = vec![
        (0.01, 8, 8000),
        (0.01, 16, 8000),
        (0.01, 128, 8000),
        (0.005, 8, 8000),
        (0.005, 16, 8000),
    ];
    let out: Vec<String> = combos
        .par_iter()
        .map(|&(lr, batch, epochs)| {
            let spec =
                NetworkSpec { init_weight_std: 0.5, ..NetworkSpec::benchmark_default(1) };
            let config = TrainConfig {
                learning_rate: lr,
                batch_size: batch,
                epochs,
                train_fraction: 0.85,
                snapshot_schedule: Vec::new(),
            };
            let run = train(&spec, &config, &data).unwrap();
            let traj = estimate_layer_mi(&run, &task, &BinningConfig::default()).unwrap();
            let snr = gradient_snr_series(&run, 4, Some(5)).unwrap();
            let trans = detect_snr_transition(&snr).unwrap();
            let onset = detect_compression_onset(&traj, 4, &OnsetConfig::default()).unwrap();
            format!(
                "lr {lr} batch {batch} epochs {epochs}: trans {:?} onset {:?} train_err {:.3} test_err {:.3} ity {:.3}",
                trans,
                onset,
                run.train_error.last().unwrap(),
                run.test_error.last().unwrap(),
                traj.layers[5].last().unwrap().i_ty
            )
        })
        .collect();
    for r in out {
        println!("{r}");
    }
}

#[test]
#[ignore]
fn pilot_batch8_rescue() {
    use rayon::prelude::*;
    let (patterns, rule) =
        generate_symmetric_rule::<f64>(1, &GroupSpec::default_symmetric()).unwrap();
    let data = Dataset::from_rule(&patterns, &rule, 1);
    let combos: Vec<(f64, usize, u64)> = vec![
        (0.0025, 8, 1),
        (0.005, 8, 2),
        (0.0025, 8, 2),
        (0.00125, 8, 1),
        (0.0025, 16, 1),
        (0.04, 128, 1),
    ];
    let out: Vec<String> = combos
        .par_iter()
        .map(|&(lr, batch, seed)| {
            let spec =
                NetworkSpec { init_weight_std: 0.5, ..NetworkSpec::benchmark_default(seed) };
            let config = TrainConfig {
                learning_rate: lr,
                batch_size: batch,
                epochs: 12000,
                train_fraction: 0.85,
                snapshot_schedule: vec![0],
            };
            let run = train(&spec, &config, &data).unwrap();
            // error trajectory probes at a few epochs
            let probe: Vec<String> = [500usize, 2000, 6000, 11999]
                .iter()
                .map(|&e| format!("e{e}:{:.3}", run.train_error[e.min(run.train_error.len() - 1)]))
                .collect();
            format!(
                "lr {lr} batch {batch} seed {seed}: {} final test {:.3}",
                probe.join(" "),
                run.test_error.last().unwrap()
            )
        })
        .collect();
    for r in out {
        println!("{r}");
    }
}

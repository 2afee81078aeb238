use std::time::Instant;

use slrobust::gradcheck;
use slrobust::toytrain::{
    render_table, run_experiment, Condition, SynthConfig, TrainConfig, DEMO_SEEDS,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("demo");

    if mode == "grad" {
        let t0 = Instant::now();
        for check in gradcheck::run_all(42, 100) {
            println!(
                "{:<12} max_rel_err {:.3e} (threshold {:.0e}) {}",
                check.name,
                check.max_rel_err,
                check.threshold,
                if check.passed() { "PASS" } else { "FAIL" }
            );
        }
        println!("grad suite: {:.2}s", t0.elapsed().as_secs_f64());
        return;
    }

    if mode == "trace" {
        use slrobust::seeding;
        use slrobust::toytrain::*;
        let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
        let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
        let cond = match args.get(4).map(String::as_str) {
            Some("br") => Condition::Br,
            Some("br_dae") => Condition::BrDae,
            _ => Condition::Baseline,
        };
        let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(11);
        let warmup: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.5);
        let synth = SynthConfig { seed, ..SynthConfig::default() };
        let cfg = TrainConfig { seed, epochs, lr, dae_warmup_frac: warmup, ..TrainConfig::default() }
            .with_condition(cond);
        let data = gen_synthetic_dataset(&synth).unwrap();
        let n = data.train.len();
        let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
        let total_steps = steps_per_epoch * cfg.epochs as u64;
        let pool = if cfg.br_enabled {
            let catalog = make_training_scene_catalog(
                cfg.model.frame_height,
                cfg.model.frame_width,
                cfg.k_per_class.max(4),
                seeding::named_seed(cfg.seed, "brpool"),
            )
            .unwrap();
            let mut rng = seeding::rng_from(seeding::named_seed(cfg.seed, "pool"));
            slrobust::benchgen::select_training_pool(&catalog, cfg.k_per_class, &mut rng)
                .unwrap()
                .iter()
                .map(|e| e.load().unwrap().image)
                .collect()
        } else {
            Vec::new()
        };
        let mut state = TrainState::new(cfg.clone(), pool, total_steps).unwrap();
        let mut order_rng = seeding::rng_from(seeding::named_seed(cfg.seed, "batches"));
        let mut step_rng = seeding::rng_from(seeding::named_seed(cfg.seed, "augment"));
        let mut step = 0u64;
        for _epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut order_rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&slrobust::media::Video> =
                    chunk.iter().map(|&i| &data.train[i].video).collect();
                let losses = train_step(&mut state, &batch, &mut step_rng).unwrap();
                if step % 100 == 0 {
                    println!(
                        "step {step:5} l_ctc {:.4} l_sim {:.4} l_rec {:.4}",
                        losses.l_ctc, losses.l_sim, losses.l_rec
                    );
                }
                step += 1;
            }
        }
        let clean: Vec<slrobust::media::Video> =
            data.test_clean.iter().map(|m| m.video.clone()).collect();
        let e = evaluate(&state.params, &clean).unwrap();
        println!("clean WER {:.4}", e.wer);
        for (id, hyp) in e.decodes.iter().take(5) {
            println!("  {id}: {hyp:?}");
        }
        return;
    }

    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let warmup: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    for seed in DEMO_SEEDS {
        let synth = SynthConfig { seed, ..SynthConfig::default() };
        let train = TrainConfig { seed, epochs, lr, dae_warmup_frac: warmup, ..TrainConfig::default() };
        let t0 = Instant::now();
        let report = run_experiment(&synth, &train, &Condition::ALL).unwrap();
        println!(
            "== seed {seed} ({:.1}s) ==\n{}",
            t0.elapsed().as_secs_f64(),
            render_table(&report)
        );
    }
}

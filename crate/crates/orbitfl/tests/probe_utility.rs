use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orbitfl::flcore::LocalTrainConfig;
use orbitfl::learntask::{evaluate, generate_synthetic, partition_iid, train_centralized};
use orbitfl::schedulers::{pretrain_models, utility_delta_f, LogisticSourceTask, SourceTask};

#[test]
#[ignore]
fn probe_fresh_vs_stale() {
    for (sep, l2, lr, e, b) in [
        (1.0f64, 1e-3f64, 0.1f64, 8usize, 64usize),
        (1.2, 1e-3, 0.1, 8, 64),
        (1.5, 1e-3, 0.1, 8, 64),
        (1.2, 1e-3, 0.2, 8, 64),
        (1.2, 0.01, 0.1, 8, 64),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = generate_synthetic(4_000, 16, 10, sep, 10, &mut rng).unwrap();
        let partitioning = partition_iid(&data, 48, &mut rng).unwrap();
        let train = LocalTrainConfig { steps_e: e, batch_b: b, lr, l2 };
        let task = LogisticSourceTask::new(&data, partitioning.index_lists(), train).unwrap();
        let models = pretrain_models(&task, 96, 8, 99).unwrap();
        let s_max = 8usize;

        // Per-start breakdown.
        print!("  by i_start:");
        for &i_start in &[8usize, 10, 12, 16, 20, 23] {
            let mut prng = ChaCha8Rng::seed_from_u64(1);
            let fresh =
                utility_delta_f(&task, &models, &vec![0; 48], i_start, s_max, 0.5, &mut prng)
                    .unwrap();
            let mut prng = ChaCha8Rng::seed_from_u64(1);
            let stale = utility_delta_f(
                &task,
                &models,
                &vec![s_max as i32; 48],
                i_start,
                s_max,
                0.5,
                &mut prng,
            )
            .unwrap();
            print!(" [{i_start}] f {:+.4} s {:+.4}", fresh.delta_f, stale.delta_f);
        }
        println!();

        let mut fresh_sum = 0.0;
        let mut stale_sum = 0.0;
        for probe in 0..40u64 {
            let mut prng = ChaCha8Rng::seed_from_u64(1_000 + probe);
            let i_start = prng.gen_range(s_max..models.len() - 1);
            let fresh =
                utility_delta_f(&task, &models, &vec![0; 48], i_start, s_max, 0.5, &mut prng)
                    .unwrap();
            let mut prng = ChaCha8Rng::seed_from_u64(1_000 + probe);
            let _ = prng.gen_range(s_max..models.len() - 1);
            let stale = utility_delta_f(
                &task,
                &models,
                &vec![s_max as i32; 48],
                i_start,
                s_max,
                0.5,
                &mut prng,
            )
            .unwrap();
            fresh_sum += fresh.delta_f;
            stale_sum += stale.delta_f;
        }
        let mean_norm2: f64 = (0..data.len())
            .map(|i| data.row(i).iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / data.len() as f64;
        let clr = 1.0 / (0.5 * mean_norm2 + 1e-3);
        let central = train_centralized(&data, clr, 300, l2).unwrap();
        let ceiling = evaluate(&central, &data).unwrap();
        println!(
            "sep={sep} l2={l2} lr={lr} E={e} B={b}: fresh {:.5} stale {:.5} ({})  ceiling {:.3}",
            fresh_sum / 40.0,
            stale_sum / 40.0,
            if fresh_sum > stale_sum { "OK" } else { "BAD" },
            ceiling
        );
    }
}

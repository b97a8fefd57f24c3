use fnmdp::env::{collect_trajectories, random_bench_env, BenchConfig, BenchTheta, UniformPolicy};
use fnmdp::fnvae::{train_fnvae, ArchConfig, ChangeMode, FnVae, TrainConfig};
use fnmdp::graph::Dims;

#[test]
fn training_halves_the_loss_on_a_linear_bench() {
    let mut cfg = BenchConfig::linear(3, BenchTheta::Markov { noise: 0.3 });
    cfg.dims = Dims { d: 3, m: 1, p: 1, q: 1 };
    let spec = random_bench_env(&cfg).unwrap();
    let mut policy = UniformPolicy::new(1, 11);
    let data = collect_trajectories(&spec, 5, &mut policy, 200, false).unwrap();
    assert_eq!(data.iter().map(|t| t.len()).sum::<usize>(), 10_000);
    let arch = ArchConfig { latent_s: 1, latent_r: 1, ..ArchConfig::default() };
    let mut model = FnVae::new(3, 1, &arch, 0).unwrap();
    let t = std::time::Instant::now();
    let report = train_fnvae(&mut model, &data, &ChangeMode::Continuous, &TrainConfig::default(), true, 0).unwrap();
    let first = report.epochs[0].total;
    let last = report.epochs.last().unwrap().total;
    eprintln!("total {first:.2} -> {last:.2} in {:.1?}", t.elapsed());
    assert!(last <= 0.5 * first, "loss went from {first} to {last}");
}

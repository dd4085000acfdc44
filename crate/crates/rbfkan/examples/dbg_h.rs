use rbfkan::benchmarks::FunctionId;
use rbfkan::experiment::{cmd_train, ExperimentConfig, ModelKind};
use rbfkan::kernels::KernelKind;

fn main() {
    let k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(24);
    let batch: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(32);
    let cells = [
        (FunctionId::F1, KernelKind::Ga, ModelKind::Adaptive),
        (FunctionId::F1, KernelKind::Ga, ModelKind::FastkanFixed),
        (FunctionId::F2, KernelKind::Ga, ModelKind::Adaptive),
        (FunctionId::F2, KernelKind::M2, ModelKind::Adaptive),
        (FunctionId::F3, KernelKind::Ga, ModelKind::Adaptive),
        (FunctionId::F3, KernelKind::W2, ModelKind::Adaptive),
        (FunctionId::F4, KernelKind::Ga, ModelKind::Adaptive),
        (FunctionId::F4, KernelKind::W6, ModelKind::Adaptive),
    ];
    for (function, kernel, model) in cells {
        print!("{function} {:>3} {:<14}", kernel.name(), model.name());
        for seed in [1u64, 2, 3] {
            let mut cfg = ExperimentConfig { function, kernel, model, seed, ..ExperimentConfig::default() };
            cfg.network.num_centers = k;
            cfg.train.batch_size = batch;
            cfg.train.seed = seed;
            let dir = std::path::PathBuf::from(format!("/tmp/g_{k}_{batch}_{function}_{}_{}_{seed}", kernel.name(), model.name()));
            match cmd_train(&cfg, None, &dir) {
                Ok(r) => print!("  {:.3e}(h{})", r.test_rel_l2, r.h_final.map(|h| format!("{h:.2}")).unwrap_or_default()),
                Err(e) => print!("  FAIL:{e}"),
            }
        }
        println!();
    }
}

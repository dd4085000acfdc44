use rbfkan::benchmarks::FunctionId;
use rbfkan::experiment::{cmd_train, ExperimentConfig, ModelKind};
use rbfkan::kernels::KernelKind;

fn main() {
    let batch: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let seed: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1);
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
    let out_root = std::path::PathBuf::from(format!("/tmp/bench_probe_b{batch}_s{seed}"));
    for (function, kernel, model) in cells {
        let mut cfg = ExperimentConfig {
            function,
            kernel,
            model,
            seed,
            ..ExperimentConfig::default()
        };
        cfg.train.batch_size = batch;
        cfg.train.seed = seed;
        let dir = out_root.join(format!("{function}_{}_{}", kernel.name(), model.name()));
        match cmd_train(&cfg, None, &dir) {
            Ok(report) => println!(
                "{function} {:>4} {:<14} h_init {:>7} h_final {:>7} rel_l2 {:.3e}",
                kernel.name(),
                model.name(),
                report.h_init.map(|h| format!("{h:.3}")).unwrap_or_default(),
                report.h_final.map(|h| format!("{h:.3}")).unwrap_or_default(),
                report.test_rel_l2,
            ),
            Err(e) => println!("{function} {} {} FAILED: {e}", kernel.name(), model.name()),
        }
    }
}

use rbfkan::benchmarks::{Dataset, FunctionId};
use rbfkan::kernels::KernelKind;
use rbfkan::loocv::{prepare_auxiliary, search_h, LoocvConfig};
use std::time::Instant;

fn main() {
    let cfg = LoocvConfig::default();
    let t0 = Instant::now();
    for function in FunctionId::ALL {
        for kernel in KernelKind::ALL {
            print!("{function} {:>3}:", kernel.name());
            for seed in 1..=5u64 {
                let dataset = Dataset::generate(function, 2000, seed).unwrap();
                let (points, targets) = prepare_auxiliary(&dataset, &cfg).unwrap();
                match search_h(&points, &targets, kernel, &cfg) {
                    Ok(res) => print!(" {:.3}", res.h_opt),
                    Err(_) => print!(" FAIL"),
                }
            }
            println!();
        }
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}

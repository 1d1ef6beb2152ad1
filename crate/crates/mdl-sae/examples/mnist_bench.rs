//! Quick training-speed benchmark on MNIST; used to size sweep budgets.
//!
//! Usage: cargo run --release --example mnist_bench -- <k> <dict> <epochs> [lr] [batch]

use std::path::Path;
use std::time::Instant;

use mdl_sae::cli::load_dataset;
use mdl_sae::codec;
use mdl_sae::sae::{train, ActivationRule, SaeConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let k: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(16);
    let dict: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(512);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(5);
    let lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
    let batch: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(512);

    let dir = std::env::var("MNIST_DIR").unwrap_or_else(|_| "data/mnist".into());
    let train_data = load_dataset(Path::new(&dir).join("train-images-idx3-ubyte").as_path())
        .expect("train images")
        .head(10_000);
    let test_data = load_dataset(Path::new(&dir).join("t10k-images-idx3-ubyte").as_path())
        .expect("test images")
        .head(2_000);

    let config = SaeConfig {
        input_dim: 784,
        dict_size: dict,
        k,
        l1_coefficient: 0.0,
        learning_rate: lr,
        epochs,
        batch_size: batch,
        seed: 1,
        activation_rule: ActivationRule::BatchTopK,
        patience: 12,
        target_test_mse: None,
    };
    let t0 = Instant::now();
    let (model, report) = train(config, &train_data.data, &test_data.data).expect("training");
    let elapsed = t0.elapsed().as_secs_f64();
    println!(
        "k={k} D={dict} epochs_run={} train={:.5} test={:.5} L0={:.2} alive={} wall={elapsed:.1}s ({:.2}s/epoch)",
        report.epochs_run,
        report.final_train_mse,
        report.final_test_mse,
        report.mean_l0,
        report.alive_features,
        elapsed / report.epochs_run as f64
    );
    if report.final_test_mse < 0.015 {
        let bits = codec::effective_precision_search(&model, &test_data.data, 0.015).unwrap();
        let latents = model.encode(&test_data.data).unwrap();
        let dl = codec::build_dl_report(&latents, 784, bits, report.final_test_mse).unwrap();
        println!(
            "B={} entropy_dl={:.2} upper_bound={:.2} alive={}",
            bits, dl.entropy_dl_bits, dl.upper_bound_dl_bits, dl.alive_features
        );
    }
}

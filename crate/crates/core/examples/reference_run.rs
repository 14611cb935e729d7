//! Trains on the seeded synthetic dataset and prints float and fixed-point
//! results side by side.
//!
//! `cargo run --release --example reference_run -- [psi]`

use fcdsae::dataset::{class_counts, generate_synthetic, label_all, split};
use fcdsae::quant::{evaluate_quantized, quantize_model, QFormat};
use fcdsae::sparsity::SparsityConfig;
use fcdsae::trainer::{mean_hidden_activation, train, TrainConfig};
use fcdsae::Execution;

fn main() -> fcdsae::Result<()> {
    let psi: f64 = std::env::args().nth(1).map_or(1e-3, |s| s.parse().expect("psi"));
    let examples = label_all(&generate_synthetic(36_363, 42)?);
    println!("class counts: {:?}", class_counts(&examples));
    let data = split(examples, 42)?;
    let cfg = TrainConfig {
        sparsity: SparsityConfig::with_psi(psi),
        ..TrainConfig::default()
    };
    let out = train(&cfg, &data)?;
    let r = &out.report;
    for e in 0..r.epochs_run() {
        println!(
            "epoch {:>2}  J {:.5}  mse {:.5}  train {:.4}  val {:.4}",
            e + 1,
            r.j_total[e],
            r.mse[e],
            r.train_accuracy[e],
            r.val_accuracy[e]
        );
    }
    println!("best epoch {}  ({:.2}s)", r.best_epoch, r.wall_time_secs);
    print!("{}", r.test.metrics);
    print!("{}", r.test.confusion.to_csv_string());
    let act = mean_hidden_activation(&out.params, &out.standardizer, &data.test, Execution::Parallel)?;
    println!("mean hidden activation {act:.6}");
    for fmt in ["Q8.8", "Q2.30", "Q6.10", "Q4.12"] {
        let fmt: QFormat = fmt.parse()?;
        let q = quantize_model(&out.params, &out.standardizer, fmt, data.seed)?;
        let ev = evaluate_quantized(&q.model, &out.params, &out.standardizer, &data.test, Execution::Parallel)?;
        println!(
            "{fmt}: in {} scale {} saturated {}  acc {:.4}  drop {:.3} pts",
            q.model.input_fmt, q.model.scale_fmt, q.saturated, ev.quantized.metrics.accuracy, ev.accuracy_drop_points
        );
    }
    Ok(())
}

//! Runs the synthetic benchmark end to end and prints one line per round.
//!
//! ```text
//! cargo run --release -p cleangraph --example benchmark -- [noise_sigma] [rounds]
//! ```

use cleangraph::pipeline::run_pipeline;
use cleangraph::PipelineConfig;

fn main() -> cleangraph::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = PipelineConfig::default();
    if let Some(s) = args.first() {
        config.synthetic.noise_sigma = s.parse().expect("noise_sigma must be a number");
    }
    let rounds = args.get(1).map_or(1, |s| s.parse().expect("rounds must be 1 or 2"));
    let run = run_pipeline(&config, rounds)?;
    for (i, r) in run.rounds.iter().enumerate() {
        let m = &r.report;
        println!(
            "round {}: F_B {:.4}  F_P {:.4}  clusters {}  SNR {:.2}  Q {:.3} -> {:.3}",
            i + 1,
            m.bcubed.f,
            m.pairwise.f,
            m.num_clusters,
            m.snr.unwrap_or(f64::NAN),
            m.q_before.unwrap_or(f64::NAN),
            m.q_after.unwrap_or(f64::NAN),
        );
    }
    Ok(())
}

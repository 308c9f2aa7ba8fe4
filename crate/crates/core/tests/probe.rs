// Temporary diagnostic probe; removed before ship.
use std::time::Instant;

use discharge_core::experiment::{run_pipeline, ExperimentConfig};

#[test]
fn probe_pipeline_timing() {
    for seed in 0..3u64 {
        let config = ExperimentConfig {
            seed,
            ..Default::default()
        };
        let start = Instant::now();
        match run_pipeline(&config) {
            Ok(summary) => println!(
                "seed={seed}: {:.2?} pass={} peak={} final={} pathlen={} fallback={} unique={} cross={:.2e}",
                start.elapsed(),
                summary.pass,
                summary.peak_active,
                summary.final_active,
                summary.path.links.len(),
                summary.newton_fallback,
                summary.path.unique,
                summary.cross_check_max_diff,
            ),
            Err(e) => println!("seed={seed}: ERR {e} after {:.2?}", start.elapsed()),
        }
    }
}

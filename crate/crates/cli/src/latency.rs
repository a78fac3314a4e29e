//! Wall-clock forward-pass timing. Comparisons are only meaningful between
//! paired in-process runs; no absolute throughput claims.

use std::time::Instant;

use miniseg_core::error::{Error, Result};
use miniseg_core::model::{Model, ModelInput};
use miniseg_tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LatencyReport {
    pub warmup: usize,
    pub iters: usize,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub p90_ms: f64,
    pub threads: usize,
    pub build_mode: &'static str,
}

impl LatencyReport {
    pub fn kv_lines(&self) -> String {
        format!(
            "median_ms={:.4} p90_ms={:.4} iters={} warmup={} threads={} build={}\n",
            self.median_ms, self.p90_ms, self.iters, self.warmup, self.threads, self.build_mode
        )
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Steady-state forward latency over `iters` timed passes after `warmup`
/// untimed ones. All arithmetic is single-threaded.
pub fn measure_latency(
    model: &Model,
    image: &Tensor,
    iters: usize,
    warmup: usize,
) -> Result<LatencyReport> {
    if iters < 20 {
        return Err(Error::Contract(format!(
            "latency measurement needs >= 20 iterations, got {iters}"
        )));
    }
    if warmup < 5 {
        return Err(Error::Contract(format!(
            "latency measurement needs >= 5 warmup passes, got {warmup}"
        )));
    }
    let input = ModelInput::Image(image);
    for _ in 0..warmup {
        let out = model.forward(&input, None, true)?;
        std::hint::black_box(out.stages.len());
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        let out = model.forward(&input, None, true)?;
        std::hint::black_box(out.stages.len());
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = samples.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_ms = if sorted.len() % 2 == 0 {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    } else {
        sorted[sorted.len() / 2]
    };
    let p90_ms = percentile(&sorted, 0.9);
    Ok(LatencyReport {
        warmup,
        iters,
        samples_ms: samples,
        median_ms,
        p90_ms,
        threads: 1,
        build_mode: if cfg!(debug_assertions) {
            "debug"
        } else {
            "release"
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use miniseg_core::config::ModelConfig;
    use miniseg_core::model::build_model;

    #[test]
    fn report_contract() {
        let cfg = ModelConfig {
            d: 16,
            n_queries: 8,
            input_size: 32,
            ..ModelConfig::default()
        };
        let model = build_model(&cfg, 0).unwrap();
        let image = Tensor::zeros(&[3, 32, 32]);
        assert!(measure_latency(&model, &image, 10, 5).is_err());
        let report = measure_latency(&model, &image, 20, 5).unwrap();
        assert_eq!(report.samples_ms.len(), 20);
        assert!(report.median_ms <= report.p90_ms);
        assert!(report.median_ms > 0.0);
    }
}

//! Analytic FLOP and parameter accounting. Counts are exact functions of
//! shapes: multiply-adds x2 for matmuls, convolutions, attention, pooling,
//! and the gated combine. Norms, activations, and resampling are excluded
//! from the convention. The counted path is the image panoptic forward with
//! no prompts.

use miniseg_core::config::{ModelConfig, DECODER_STAGES};
use miniseg_core::adapter::AdapterKind;
use miniseg_core::backbone::STAGE_CHANNELS;
use miniseg_core::update::UpdateKind;

#[derive(Debug, Clone)]
pub struct FlopsReport {
    pub decoder_kind: UpdateKind,
    pub input_size: usize,
    pub backbone: u64,
    /// Query-update strategy over the three stages.
    pub decoder_update: u64,
    /// Self-attention + FFN over the three stages.
    pub decoder_mix: u64,
    /// Mask projections + dot products + classifiers over every prediction set.
    pub heads: u64,
    pub adapters: u64,
    pub total: u64,
    pub params: u64,
}

impl FlopsReport {
    pub fn kv_lines(&self) -> String {
        format!(
            "decoder={} input={} flops_backbone={} flops_decoder_update={} flops_decoder_mix={} flops_heads={} flops_adapters={} flops_total={} params={}\n",
            self.decoder_kind.name(),
            self.input_size,
            self.backbone,
            self.decoder_update,
            self.decoder_mix,
            self.heads,
            self.adapters,
            self.total,
            self.params
        )
    }
}

/// `2 m k n` for an `[m,k] . [k,n]` matmul.
pub fn matmul_flops(m: u64, k: u64, n: u64) -> u64 {
    2 * m * k * n
}

fn conv_flops(k: u64, cin: u64, cout: u64, out_hw: u64) -> u64 {
    2 * k * k * cin * cout * out_hw
}

/// One stage of the query-update strategy at `n` queries over `hw` pixels.
pub fn update_flops_per_stage(kind: UpdateKind, n: u64, d: u64, hw: u64) -> u64 {
    let pooling = 2 * n * hw * d;
    let combine = 3 * n * d; // two elementwise products and one add
    match kind {
        UpdateKind::PoolDcg => {
            let gates = 2 * (2 * n * d * d);
            pooling + gates + combine
        }
        UpdateKind::PoolDc => pooling + combine,
        UpdateKind::PerPixelCa => {
            let logits = 2 * n * hw * d;
            let values = 2 * n * hw * d;
            let projections = 2 * n * d * d  // q
                + 2 * hw * d * d             // k
                + 2 * hw * d * d             // v
                + 2 * n * d * d; // o
            logits + values + projections
        }
    }
}

fn backbone_flops(d: u64, size: u64) -> u64 {
    let mut total = 0;
    let mut cin = 3u64;
    let mut side = size;
    for &cout in &STAGE_CHANNELS {
        let cout = cout as u64;
        side /= 2;
        total += conv_flops(3, cin, cout, side * side); // stride-2 conv
        total += conv_flops(3, cout, cout, side * side);
        cin = cout;
    }
    // laterals from strides 4, 8, 16 down to d
    total += conv_flops(1, STAGE_CHANNELS[1] as u64, d, (size / 4) * (size / 4));
    total += conv_flops(1, STAGE_CHANNELS[2] as u64, d, (size / 8) * (size / 8));
    total += conv_flops(1, STAGE_CHANNELS[3] as u64, d, (size / 16) * (size / 16));
    // 3x3 output conv at stride 4
    total += conv_flops(3, d, d, (size / 4) * (size / 4));
    total
}

fn mix_flops_per_stage(n: u64, d: u64) -> u64 {
    let projections = 4 * matmul_flops(n, d, d);
    let attention = 2 * n * n * d + 2 * n * n * d; // logits + values over heads
    let ffn = matmul_flops(n, d, 2 * d) + matmul_flops(n, 2 * d, d);
    projections + attention + ffn
}

fn head_flops(n: u64, d: u64, classes: u64, hw: u64) -> u64 {
    let mask = matmul_flops(n, d, d) + 2 * n * d * hw;
    let cls = matmul_flops(n, d, d) + matmul_flops(n, d, classes + 1);
    mask + cls
}

fn adapter_flops(kind: AdapterKind, n: u64, d: u64, hw: u64) -> u64 {
    match kind {
        AdapterKind::None => 0,
        AdapterKind::Dc => update_flops_per_stage(UpdateKind::PoolDcg, n, d, hw),
        AdapterKind::Ca => update_flops_per_stage(UpdateKind::PerPixelCa, n, d, hw),
    }
}

/// Exact FLOP counts for the panoptic forward at the given decoder kind.
pub fn count_flops(cfg: &ModelConfig, kind: UpdateKind, input_size: usize) -> FlopsReport {
    let d = cfg.d as u64;
    let n = cfg.n_queries as u64;
    let classes = cfg.classes as u64;
    let size = input_size as u64;
    let hw = (size / 4) * (size / 4);

    let backbone = backbone_flops(d, size);
    let decoder_update = DECODER_STAGES as u64 * update_flops_per_stage(kind, n, d, hw);
    let decoder_mix = DECODER_STAGES as u64 * mix_flops_per_stage(n, d);
    let adapters_active = cfg.meta_arch.has_adapters()
        && (cfg.adapter_obj != AdapterKind::None || cfg.adapter_prompt != AdapterKind::None);
    let prediction_sets = 1 + DECODER_STAGES as u64 + u64::from(adapters_active);
    let heads = prediction_sets * head_flops(n, d, classes, hw);
    let adapters = if cfg.meta_arch.has_adapters() {
        adapter_flops(cfg.adapter_obj, n, d, hw)
    } else {
        0
    };
    let total = backbone + decoder_update + decoder_mix + heads + adapters;
    FlopsReport {
        decoder_kind: kind,
        input_size,
        backbone,
        decoder_update,
        decoder_mix,
        heads,
        adapters,
        total,
        params: count_params_analytic(cfg),
    }
}

fn linear_params(din: u64, dout: u64) -> u64 {
    din * dout + dout
}

fn gate_pair_params(d: u64) -> u64 {
    2 * (linear_params(d, d) + 2 * d)
}

fn update_params(kind: UpdateKind, d: u64) -> u64 {
    match kind {
        UpdateKind::PoolDcg => gate_pair_params(d),
        UpdateKind::PoolDc => 2 * d,
        UpdateKind::PerPixelCa => 4 * linear_params(d, d),
    }
}

fn head_params(d: u64, classes: u64) -> u64 {
    linear_params(d, d) + linear_params(d, d) + linear_params(d, classes + 1)
}

fn decoder_params(cfg: &ModelConfig) -> u64 {
    let d = cfg.d as u64;
    let classes = cfg.classes as u64;
    let per_stage = update_params(cfg.decoder_kind, d)
        + 4 * linear_params(d, d)                         // mhsa projections
        + linear_params(d, 2 * d) + linear_params(2 * d, d) // ffn
        + head_params(d, classes);
    head_params(d, classes) + DECODER_STAGES as u64 * per_stage
}

fn adapter_params(kind: AdapterKind, d: u64) -> u64 {
    match kind {
        AdapterKind::None => 0,
        AdapterKind::Dc => gate_pair_params(d),
        AdapterKind::Ca => 4 * linear_params(d, d),
    }
}

/// Closed-form parameter count; checked against the exact per-tensor sum.
pub fn count_params_analytic(cfg: &ModelConfig) -> u64 {
    let d = cfg.d as u64;
    let mut total = 0;
    // backbone
    let mut cin = 3u64;
    for &cout in &STAGE_CHANNELS {
        let cout = cout as u64;
        total += 9 * cin * cout + 9 * cout * cout + 4 * cout;
        cin = cout;
    }
    for &cs in &STAGE_CHANNELS[1..] {
        total += cs as u64 * d + d;
    }
    total += 9 * d * d + d;
    // prompt encoder
    total += linear_params(d, d) + d;
    // decoders
    total += decoder_params(cfg);
    if cfg.meta_arch.decoupled() {
        total += decoder_params(cfg);
    }
    // adapters
    if cfg.meta_arch.has_adapters() {
        total += adapter_params(cfg.adapter_obj, d) + adapter_params(cfg.adapter_prompt, d);
    }
    // learned queries
    total += cfg.n_queries as u64 * d;
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use miniseg_core::config::MetaArch;
    use miniseg_core::model::build_model;
    use miniseg_core::params::count_params;

    #[test]
    fn single_matmul_convention() {
        assert_eq!(matmul_flops(2, 3, 4), 48);
    }

    #[test]
    fn analytic_params_match_exact_sum_for_every_arch_and_kind() {
        for arch in [MetaArch::A, MetaArch::B, MetaArch::C, MetaArch::D] {
            for kind in [UpdateKind::PoolDcg, UpdateKind::PoolDc, UpdateKind::PerPixelCa] {
                let cfg = ModelConfig {
                    d: 16,
                    n_queries: 8,
                    input_size: 32,
                    meta_arch: arch,
                    decoder_kind: kind,
                    ..ModelConfig::default()
                };
                let model = build_model(&cfg, 0).unwrap();
                assert_eq!(
                    count_params_analytic(&cfg),
                    count_params(&model),
                    "arch {:?} kind {:?}",
                    arch,
                    kind
                );
            }
        }
    }

    #[test]
    fn per_stage_ordering_at_reference_config() {
        let (n, d, hw) = (20, 64, 256);
        let ca = update_flops_per_stage(UpdateKind::PerPixelCa, n, d, hw);
        let dcg = update_flops_per_stage(UpdateKind::PoolDcg, n, d, hw);
        let dc = update_flops_per_stage(UpdateKind::PoolDc, n, d, hw);
        assert!(ca > dcg, "{ca} vs {dcg}");
        assert!(dcg > dc, "{dcg} vs {dc}");
        // the dcg - dc difference is exactly the two gate FCs
        assert_eq!(dcg - dc, 2 * (2 * n * d * d));
    }

    #[test]
    fn totals_equal_component_sums() {
        let cfg = ModelConfig::default();
        for kind in [UpdateKind::PoolDcg, UpdateKind::PoolDc, UpdateKind::PerPixelCa] {
            let r = count_flops(&cfg, kind, 64);
            assert_eq!(
                r.total,
                r.backbone + r.decoder_update + r.decoder_mix + r.heads + r.adapters
            );
        }
    }
}

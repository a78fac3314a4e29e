//! Acceptance suite: one test per criterion, each printing a PASS line.
//! Criteria hold at pinned tolerances; the tests serialize on a shared gate
//! so latency measurements and long training runs do not contend.

use std::sync::Mutex;

use miniseg_cli::{evalrun, flops, gradsuite, latency};
use miniseg_core::adapter::AdapterKind;
use miniseg_core::backbone::FeatureMap;
use miniseg_core::config::{DataConfig, MetaArch, ModelConfig};
use miniseg_core::data::DatasetStream;
use miniseg_core::decoder::{mask_pool_image, mask_pool_video};
use miniseg_core::hungarian::{assignment_cost, hungarian};
use miniseg_core::infer::{infer_interactive, infer_panoptic};
use miniseg_core::metrics::panoptic_quality;
use miniseg_core::model::build_model;
use miniseg_core::params::count_params;
use miniseg_core::prompt::VisualPrompt;
use miniseg_core::train::{train_step, AdamW};
use miniseg_core::update::UpdateKind;
use miniseg_tensor::{ops, SplitMix64, Tensor};

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn random_tensor(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect()).unwrap()
}

#[test]
fn criterion_1_gradient_suite() {
    let _g = gate();
    let start = std::time::Instant::now();
    let mut all = Vec::new();
    all.extend(gradsuite::ops_suite().unwrap());
    all.extend(gradsuite::decoder_suite().unwrap());
    all.extend(gradsuite::loss_suite().unwrap());
    for report in &all {
        assert!(report.passed, "criterion 1: {report}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 1 runtime {elapsed:.1}s exceeds 2 min");
    println!(
        "acceptance: criterion 1 (gradient suite, {} checks, {elapsed:.1}s) PASS",
        all.len()
    );
}

#[test]
fn criterion_2_oracle_suite() {
    let _g = gate();
    let start = std::time::Instant::now();
    let mut rng = SplitMix64::new(0x0c2);

    // Eq. 1 pooling vs triple loop
    for _ in 0..10 {
        let (n, h, w, d) = (
            1 + rng.below(6),
            2 + rng.below(7),
            2 + rng.below(7),
            1 + rng.below(12),
        );
        let feat = FeatureMap::image(random_tensor(&[h, w, d], &mut rng));
        let weights = random_tensor(&[n, h, w], &mut rng);
        let pooled = mask_pool_image(&weights, &feat).unwrap();
        for q in 0..n {
            for c in 0..d {
                let mut want = 0.0;
                for u in 0..h {
                    for v in 0..w {
                        want += weights.at(&[q, u, v]) * feat.data.at(&[u, v, c]);
                    }
                }
                assert!(
                    (pooled.at(&[q, c]) - want).abs() <= 1e-10,
                    "criterion 2: image pooling"
                );
            }
        }
    }
    // Eq. 2 pooling vs quadruple loop
    for _ in 0..10 {
        let (n, t, h, w, d) = (
            1 + rng.below(5),
            1 + rng.below(3),
            2 + rng.below(6),
            2 + rng.below(6),
            1 + rng.below(10),
        );
        let feat = FeatureMap::video(random_tensor(&[t, h, w, d], &mut rng));
        let weights = random_tensor(&[n, t, h, w], &mut rng);
        let pooled = mask_pool_video(&weights, &feat).unwrap();
        for q in 0..n {
            for c in 0..d {
                let mut want = 0.0;
                for ti in 0..t {
                    for u in 0..h {
                        for v in 0..w {
                            want += weights.at(&[q, ti, u, v]) * feat.data.at(&[ti, u, v, c]);
                        }
                    }
                }
                assert!(
                    (pooled.at(&[q, c]) - want).abs() <= 1e-10,
                    "criterion 2: video pooling"
                );
            }
        }
    }

    // matmul vs triple loop
    for _ in 0..20 {
        let (m, k, n) = (1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(8));
        let a = random_tensor(&[m, k], &mut rng);
        let b = random_tensor(&[k, n], &mut rng);
        let c = ops::matmul(&a, &b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let mut want = 0.0;
                for p in 0..k {
                    want += a.at(&[i, p]) * b.at(&[p, j]);
                }
                assert!((c.at(&[i, j]) - want).abs() <= 1e-12, "criterion 2: matmul");
            }
        }
    }

    // conv2d vs naive six-loop
    for &(cin, cout, h, w, k, stride, pad) in &[
        (1usize, 2usize, 6usize, 6usize, 3usize, 1usize, 1usize),
        (3, 2, 8, 7, 3, 2, 1),
        (2, 3, 7, 8, 1, 1, 0),
        (1, 1, 8, 8, 5, 1, 2),
    ] {
        let x = random_tensor(&[cin, h, w], &mut rng);
        let wt = random_tensor(&[cout, cin, k, k], &mut rng);
        let y = ops::conv2d(&x, &wt, None, stride, pad).unwrap();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut want = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    want += x.at(&[ci, iy as usize, ix as usize])
                                        * wt.at(&[co, ci, ky, kx]);
                                }
                            }
                        }
                    }
                    assert!(
                        (y.at(&[co, oy, ox]) - want).abs() <= 1e-12,
                        "criterion 2: conv2d"
                    );
                }
            }
        }
    }

    // hungarian vs exhaustive permutations, exact total equality
    for trial in 0..200 {
        let n = 1 + rng.below(7);
        let g = 1 + rng.below(7);
        let costs = random_tensor(&[n, g], &mut rng);
        let assignment = hungarian(&costs).unwrap();
        assert_eq!(assignment.pairs.len(), n.min(g));
        let total = assignment_cost(&costs, &assignment.pairs);
        let best = exhaustive_min(&costs);
        assert_eq!(
            total.to_bits(),
            best.to_bits(),
            "criterion 2: hungarian trial {trial} on {n}x{g}: {total} vs {best}"
        );
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 2 runtime {elapsed:.1}s exceeds 1 min");
    println!("acceptance: criterion 2 (oracle suite, {elapsed:.1}s) PASS");
}

/// Factorial brute force; best pair set re-summed in prediction order.
fn exhaustive_min(costs: &Tensor) -> f64 {
    let (n, g) = (costs.shape()[0], costs.shape()[1]);
    let small_rows = n <= g;
    let (k, large) = (n.min(g), n.max(g));
    let mut best = f64::INFINITY;
    let mut best_pairs = Vec::new();
    let mut used = vec![false; large];
    let mut chosen = vec![0usize; k];
    fn rec(
        costs: &Tensor,
        small_rows: bool,
        depth: usize,
        k: usize,
        large: usize,
        acc: f64,
        used: &mut [bool],
        chosen: &mut [usize],
        best: &mut f64,
        best_pairs: &mut Vec<(usize, usize)>,
    ) {
        if depth == k {
            if acc < *best {
                *best = acc;
                *best_pairs = chosen
                    .iter()
                    .enumerate()
                    .map(|(s, &l)| if small_rows { (s, l) } else { (l, s) })
                    .collect();
            }
            return;
        }
        let g = costs.shape()[1];
        for l in 0..large {
            if !used[l] {
                used[l] = true;
                chosen[depth] = l;
                let cost = if small_rows {
                    costs.data()[depth * g + l]
                } else {
                    costs.data()[l * g + depth]
                };
                rec(
                    costs, small_rows, depth + 1, k, large, acc + cost, used, chosen, best,
                    best_pairs,
                );
                used[l] = false;
            }
        }
    }
    rec(
        costs,
        small_rows,
        0,
        k,
        large,
        0.0,
        &mut used,
        &mut chosen,
        &mut best,
        &mut best_pairs,
    );
    best_pairs.sort_unstable();
    assignment_cost(costs, &best_pairs)
}

#[test]
fn criterion_3_invariant_suite() {
    let _g = gate();
    let start = std::time::Instant::now();
    let mut cfg = ModelConfig {
        d: 16,
        n_queries: 8,
        input_size: 32,
        meta_arch: MetaArch::C,
        ..ModelConfig::default()
    };
    cfg.data.things_max = 3;

    // partition property over 100 random-weight inferences
    let mut checked = 0;
    for model_seed in 0..20u64 {
        let model = build_model(&cfg, model_seed).unwrap();
        for scene_seed in 0..5u64 {
            let scene =
                miniseg_core::data::gen_scene(9000 + scene_seed, 32, &cfg.data).unwrap();
            let result = infer_panoptic(&model, &scene.image, &cfg.infer).unwrap();
            assert!(result.is_partition(), "criterion 3: partition");
            assert_eq!(result.map.len(), 32 * 32);
            // table and map mutually consistent
            for seg in &result.segments {
                assert!(
                    result.map.iter().any(|&id| id == seg.id),
                    "criterion 3: dangling table entry"
                );
            }
            // PQ = SQ x RQ identity on real inference output
            let gt = miniseg_core::metrics::scene_to_panoptic(&scene);
            let report = panoptic_quality(&result, &gt).unwrap();
            for c in &report.per_class {
                if c.tp > 0 {
                    assert!(
                        (c.pq - c.sq * c.rq / 100.0).abs() < 1e-9,
                        "criterion 3: pq identity"
                    );
                }
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 100);

    // query-permutation invariance up to canonical relabeling
    {
        let mut model = build_model(&cfg, 33).unwrap();
        let scene = miniseg_core::data::gen_scene(555, 32, &cfg.data).unwrap();
        let base = infer_panoptic(&model, &scene.image, &cfg.infer)
            .unwrap()
            .canonical_relabel();
        let q = model.object_queries.clone();
        let top = ops::slice_axis0(&q, 0, 5).unwrap();
        let rest = ops::slice_axis0(&q, 5, cfg.n_queries - 5).unwrap();
        model.object_queries = ops::concat_axis0(&[&rest, &top]).unwrap().detached();
        model.object_queries.set_requires_grad(true);
        let permuted = infer_panoptic(&model, &scene.image, &cfg.infer)
            .unwrap()
            .canonical_relabel();
        assert_eq!(base.map, permuted.map, "criterion 3: permutation invariance");
        assert_eq!(base.segments, permuted.segments);
    }

    // prompt independence, bit-identical masks
    {
        let model = build_model(&cfg, 44).unwrap();
        let scene = miniseg_core::data::gen_scene(777, 32, &cfg.data).unwrap();
        let p1 = VisualPrompt::point(9.0, 9.0, 32, 32).unwrap();
        let p2 = VisualPrompt::point(22.0, 18.0, 32, 32).unwrap();
        let p3 = VisualPrompt::bbox(4.0, 4.0, 20.0, 24.0, 32, 32).unwrap();
        let all = infer_interactive(&model, &scene.image, &[p1, p2, p3]).unwrap();
        let fewer = infer_interactive(&model, &scene.image, &[p1, p3]).unwrap();
        assert_eq!(all[0], fewer[0], "criterion 3: prompt independence");
        assert_eq!(all[2], fewer[1], "criterion 3: prompt independence");
    }

    // checkpoint bit-roundtrip
    {
        let dir = std::env::temp_dir().join("miniseg_acceptance_c3");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.ckpt");
        let model = build_model(&cfg, 55).unwrap();
        let mut opt = AdamW::new(cfg.train);
        let stream = DatasetStream::new(cfg.data, cfg.input_size, cfg.clip_len, 3).unwrap();
        let mut m = model;
        for item in stream.take(2) {
            train_step(&mut m, &item.unwrap(), &mut opt, &cfg).unwrap();
        }
        miniseg_core::checkpoint::save(&m, &opt, &path).unwrap();
        let (restored, ropt, _) = miniseg_core::checkpoint::load_model(&path).unwrap();
        let before = miniseg_core::params::collect(&m);
        let after = miniseg_core::params::collect(&restored);
        for ((n1, a), (n2, b)) in before.iter().zip(&after) {
            assert_eq!(n1, n2);
            let ba: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb, "criterion 3: checkpoint roundtrip {n1}");
        }
        let path2 = dir.join("roundtrip2.ckpt");
        miniseg_core::checkpoint::save(&restored, &ropt, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap(),
            "criterion 3: resaved bytes differ"
        );
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 3 runtime {elapsed:.1}s exceeds 2 min");
    println!("acceptance: criterion 3 (invariant suite, {elapsed:.1}s) PASS");
}

#[test]
fn criterion_4_efficiency_ordering() {
    let _g = gate();
    let start = std::time::Instant::now();

    // FLOPs ordering at the reference config (N=20, d=64, 16x16 features)
    let cfg = ModelConfig::default();
    assert_eq!(cfg.n_queries, 20);
    assert_eq!(cfg.d, 64);
    assert_eq!(cfg.feat_size(), 16);
    let ca = flops::count_flops(&cfg, UpdateKind::PerPixelCa, 64);
    let dcg = flops::count_flops(&cfg, UpdateKind::PoolDcg, 64);
    let dc = flops::count_flops(&cfg, UpdateKind::PoolDc, 64);
    assert!(
        ca.decoder_update > dcg.decoder_update && dcg.decoder_update > dc.decoder_update,
        "criterion 4: flops ordering at reference config"
    );
    // and at a 2x-scaled config
    let big = ModelConfig {
        d: 128,
        n_queries: 40,
        input_size: 128,
        ..ModelConfig::default()
    };
    let ca2 = flops::count_flops(&big, UpdateKind::PerPixelCa, 128);
    let dcg2 = flops::count_flops(&big, UpdateKind::PoolDcg, 128);
    let dc2 = flops::count_flops(&big, UpdateKind::PoolDc, 128);
    assert!(
        ca2.decoder_update > dcg2.decoder_update && dcg2.decoder_update > dc2.decoder_update,
        "criterion 4: flops ordering at scaled config"
    );

    // parameter ordering across the meta-architectures: a < c < b < d
    let arch_params = |arch: MetaArch| {
        let cfg = ModelConfig {
            meta_arch: arch,
            ..ModelConfig::default()
        };
        count_params(&build_model(&cfg, 1).unwrap())
    };
    let (pa, pb, pc, pd) = (
        arch_params(MetaArch::A),
        arch_params(MetaArch::B),
        arch_params(MetaArch::C),
        arch_params(MetaArch::D),
    );
    assert!(
        pa < pc && pc < pb && pb < pd,
        "criterion 4: parameter ordering a={pa} c={pc} b={pb} d={pd}"
    );

    // paired latency: per-pixel cross-attention vs pooling + gated dynamic
    // convolution, same seed, same process, >= 10% margin on medians
    let image = Tensor::full(&[3, 64, 64], 0.5);
    let dcg_model = build_model(
        &ModelConfig {
            decoder_kind: UpdateKind::PoolDcg,
            ..ModelConfig::default()
        },
        0,
    )
    .unwrap();
    let ca_model = build_model(
        &ModelConfig {
            decoder_kind: UpdateKind::PerPixelCa,
            ..ModelConfig::default()
        },
        0,
    )
    .unwrap();
    let lat_dcg = latency::measure_latency(&dcg_model, &image, 24, 5).unwrap();
    let lat_ca = latency::measure_latency(&ca_model, &image, 24, 5).unwrap();
    assert!(
        lat_ca.median_ms > 1.10 * lat_dcg.median_ms,
        "criterion 4: latency margin: per_pixel_ca {:.3}ms vs pool_dcg {:.3}ms",
        lat_ca.median_ms,
        lat_dcg.median_ms
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 4 runtime {elapsed:.1}s exceeds 2 min");
    println!(
        "acceptance: criterion 4 (efficiency ordering, ca {:.2}ms vs dcg {:.2}ms, {elapsed:.1}s) PASS",
        lat_ca.median_ms, lat_dcg.median_ms
    );
}

#[test]
fn criterion_5_training_smoke() {
    let _g = gate();
    let start = std::time::Instant::now();
    // meta-arch (c), adapters (DC, CA), 64x64, ratio (1,1,1), seed 7
    let cfg = ModelConfig::default();
    assert_eq!(cfg.meta_arch, MetaArch::C);
    assert_eq!(cfg.adapter_obj, AdapterKind::Dc);
    assert_eq!(cfg.adapter_prompt, AdapterKind::Ca);
    assert_eq!(cfg.input_size, 64);
    assert_eq!(cfg.data.ratio, (1, 1, 1));

    let seed = 7;
    let mut model = build_model(&cfg, seed).unwrap();
    let mut opt = AdamW::new(cfg.train);
    let stream =
        DatasetStream::new(cfg.data, cfg.input_size, cfg.clip_len, seed ^ 0xda7a_5eed).unwrap();
    let mut losses = Vec::with_capacity(2000);
    for item in stream.take(2000) {
        let loss = train_step(&mut model, &item.unwrap(), &mut opt, &cfg).unwrap();
        assert!(loss.is_finite(), "criterion 5: loss diverged");
        losses.push(loss);
    }
    let early: f64 = losses[..20].iter().sum::<f64>() / 20.0;
    let late: f64 = losses[1980..].iter().sum::<f64>() / 20.0;
    assert!(
        late < 0.40 * early,
        "criterion 5: windowed loss {late:.3} not below 40% of initial {early:.3}"
    );

    // held-out evaluations
    let report = evalrun::eval_panoptic(&model, 200, 123, &cfg.data).unwrap();
    assert!(report.pq >= 50.0, "criterion 5: PQ {:.2} < 50", report.pq);

    let single_thing = DataConfig {
        things_min: 1,
        things_max: 1,
        ..cfg.data
    };
    let miou = evalrun::eval_interactive(&model, 200, 321, &single_thing).unwrap();
    assert!(miou >= 0.80, "criterion 5: 1-click mIoU {miou:.3} < 0.80");

    let vis = evalrun::eval_vis(&model, 200, 213, &cfg.data).unwrap();
    assert!(
        vis.mean_ap >= 40.0,
        "criterion 5: tube mAP {:.2} < 40",
        vis.mean_ap
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1800.0, "criterion 5 runtime {elapsed:.0}s exceeds 30 min");
    println!(
        "acceptance: criterion 5 (training smoke: loss {early:.2}->{late:.2}, PQ {:.1}, mIoU {miou:.3}, mAP {:.1}, {elapsed:.0}s) PASS",
        report.pq, vis.mean_ap
    );
}

#[test]
fn criterion_6_adapter_ablation_harness() {
    let _g = gate();
    let start = std::time::Instant::now();
    let settings = [
        (AdapterKind::None, AdapterKind::None),
        (AdapterKind::Ca, AdapterKind::Ca),
        (AdapterKind::Dc, AdapterKind::Dc),
        (AdapterKind::Dc, AdapterKind::Ca),
        (AdapterKind::Ca, AdapterKind::Dc),
    ];
    let seed = 11;
    for (obj, prompt) in settings {
        let cfg = ModelConfig {
            meta_arch: MetaArch::C,
            adapter_obj: obj,
            adapter_prompt: prompt,
            ..ModelConfig::default()
        };
        let mut model = build_model(&cfg, seed).unwrap();
        let mut opt = AdamW::new(cfg.train);
        let stream =
            DatasetStream::new(cfg.data, cfg.input_size, cfg.clip_len, seed).unwrap();
        for item in stream.take(500) {
            let loss = train_step(&mut model, &item.unwrap(), &mut opt, &cfg).unwrap();
            assert!(
                loss.is_finite(),
                "criterion 6: adapters ({}, {}) diverged",
                obj.name(),
                prompt.name()
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1200.0, "criterion 6 runtime {elapsed:.0}s exceeds 20 min");
    println!("acceptance: criterion 6 (adapter ablation harness, {elapsed:.0}s) PASS");
}

#[test]
fn criterion_7_cli_determinism() {
    let _g = gate();
    let bin = env!("CARGO_BIN_EXE_miniseg");
    let dir = std::env::temp_dir().join("miniseg_acceptance_c7");
    std::fs::create_dir_all(&dir).unwrap();
    let config_path = dir.join("small.cfg");
    std::fs::write(
        &config_path,
        "model.d = 16\nmodel.n_queries = 8\nmodel.input_size = 32\ndata.things_max = 3\n",
    )
    .unwrap();

    let train = |out: &std::path::Path| {
        let status = std::process::Command::new(bin)
            .args([
                "train",
                "--config",
                config_path.to_str().unwrap(),
                "--steps",
                "100",
                "--seed",
                "5",
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(status.status.success(), "criterion 7: train failed");
    };
    let ckpt1 = dir.join("run1.ckpt");
    let ckpt2 = dir.join("run2.ckpt");
    train(&ckpt1);
    train(&ckpt2);
    assert_eq!(
        std::fs::read(&ckpt1).unwrap(),
        std::fs::read(&ckpt2).unwrap(),
        "criterion 7: checkpoints differ between identical runs"
    );

    let eval = || {
        let out = std::process::Command::new(bin)
            .args([
                "eval",
                "--ckpt",
                ckpt1.to_str().unwrap(),
                "--task",
                "panoptic",
                "--scenes",
                "10",
                "--seed",
                "3",
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "criterion 7: eval failed");
        String::from_utf8(out.stdout).unwrap()
    };
    let lines1 = eval();
    let lines2 = eval();
    assert_eq!(lines1, lines2, "criterion 7: eval output differs");
    assert!(lines1.contains("pq="));
    println!("acceptance: criterion 7 (CLI determinism) PASS");
}

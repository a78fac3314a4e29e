// scratch probe: adapter attention geometry for a trained checkpoint
use miniseg_core::model::ModelInput;
use miniseg_tensor::ops;

fn main() {
    let ckpt = std::env::args().nth(1).unwrap_or("/tmp/ms/h.ckpt".into());
    let (model, _o, _d) =
        miniseg_core::checkpoint::load_model(std::path::Path::new(&ckpt)).unwrap();
    let mut dcfg = model.cfg.data;
    dcfg.things_min = 1;
    dcfg.things_max = 1;
    let scene = miniseg_core::data::gen_scene(31337, model.cfg.input_size, &dcfg).unwrap();
    let (samples, _) =
        miniseg_core::data::sample_prompts(&scene, miniseg_core::data::PromptMode::Test, 5);
    let s = samples
        .iter()
        .find(|s| scene.entities[s.target_index].is_thing)
        .unwrap();
    let prompts = [s.prompt];
    let out = model
        .forward(&ModelInput::Image(&scene.image), Some(&prompts), false)
        .unwrap();
    let feat = &out.feat;
    let flat = feat.flat().unwrap();
    let p_refined = out.prompt_queries.as_ref().unwrap();
    let pe_rows = model.prompt_encoder.pe_rows(&prompts).unwrap();

    // reconstruct the CA adapter attention by hand from its weights
    let mut wq = None;
    let mut wk = None;
    use miniseg_core::params::ParamVisit;
    model.visit("", &mut |name, t| {
        if name == "adapter_prompt.wq.w" { wq = Some(t.detached()); }
        if name == "adapter_prompt.wk.w" { wk = Some(t.detached()); }
    });
    let (wq, wk) = (wq.unwrap(), wk.unwrap());
    let d = model.cfg.d;
    let grid = {
        let (h, w) = feat.hw();
        let mut data = Vec::new();
        for u in 0..h {
            for v in 0..w {
                data.extend(miniseg_core::prompt::positional_encoding(
                    v as f64 + 0.5, u as f64 + 0.5, w, h, d,
                ));
            }
        }
        miniseg_tensor::Tensor::from_vec(&[h * w, d], data).unwrap()
    };
    let keyed = ops::add(&flat, &grid).unwrap();
    let q_in = ops::add(p_refined, &pe_rows).unwrap();
    let q = ops::matmul(&q_in, &wq).unwrap();
    let k = ops::matmul(&keyed, &wk).unwrap();
    let logits = ops::scale(&ops::matmul(&q, &ops::transpose(&k).unwrap()).unwrap(), 1.0 / (d as f64).sqrt());
    let attn = ops::softmax(&logits, 1).unwrap();
    let hw = attn.shape()[1];
    let side = (hw as f64).sqrt() as usize;
    let (px, py) = match s.prompt.kind {
        miniseg_core::prompt::PromptKind::Point { x, y } => (x as usize / 4, y as usize / 4),
        _ => unreachable!(),
    };
    let prompt_cell = py * side + px;
    let mut ranked: Vec<(f64, usize)> = attn.data().iter().cloned().zip(0..hw).collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let entropy: f64 = attn.data().iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum();
    println!(
        "prompt cell={prompt_cell} attn_at_prompt={:.4} top1=({:.4}@{}) top2=({:.4}@{}) entropy={:.2} (uniform={:.2})",
        attn.data()[prompt_cell], ranked[0].0, ranked[0].1, ranked[1].0, ranked[1].1, entropy, (hw as f64).ln()
    );
    println!("pe self-dot = {}", d / 2);
    println!("|p_refined| = {:.2}  |pe| = {:.2}",
        p_refined.data().iter().map(|v| v*v).sum::<f64>().sqrt(),
        pe_rows.data().iter().map(|v| v*v).sum::<f64>().sqrt());
    let dist = |a: usize| {
        let (ay, ax) = (a / side, a % side);
        (((ay as f64 - py as f64).powi(2) + (ax as f64 - px as f64).powi(2)) as f64).sqrt()
    };
    println!("top-5 cells distance from prompt: {:?}", ranked[..5].iter().map(|(_, c)| dist(*c).round()).collect::<Vec<_>>());
}

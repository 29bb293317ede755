// Temporary experiment harness (deleted before release).
use dbea_cli::config::RunConfig;
use dbea_cli::evalrun::{run_ood_benchmark, ScoreLevel};
use dbea_cli::train::fit;
use dbea_core::world::{generate_dataset, RegimeKind};

fn fmt3(q: (f64, f64, f64)) -> String {
    format!("[{:.1e} {:.1e} {:.1e}]", q.0, q.1, q.2)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let eps: f64 = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(1e-4);
    let scenes: usize = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(600);
    let epochs: usize = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(15);
    let seed: u64 = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(0);
    let lambda_div: f64 = args.get(5).and_then(|v| v.parse().ok()).unwrap_or(40.0);

    let min_obj: usize = args.get(6).and_then(|v| v.parse().ok()).unwrap_or(2);
    let max_obj: usize = args.get(7).and_then(|v| v.parse().ok()).unwrap_or(8);
    let near_lo: f64 = args.get(8).and_then(|v| v.parse().ok()).unwrap_or(0.32);
    let near_hi: f64 = args.get(9).and_then(|v| v.parse().ok()).unwrap_or(0.46);
    let noise_dim: usize = args.get(10).and_then(|v| v.parse().ok()).unwrap_or(4);
    let bias: f64 = args.get(11).and_then(|v| v.parse().ok()).unwrap_or(0.55);
    let head_hidden: usize = args.get(12).and_then(|v| v.parse().ok()).unwrap_or(32);
    let trunk_hidden: usize = args.get(13).and_then(|v| v.parse().ok()).unwrap_or(64);
    let feature_dim: usize = args.get(14).and_then(|v| v.parse().ok()).unwrap_or(16);

    let mut cfg = RunConfig::default_dbea();
    cfg.seed = seed;
    cfg.loss.epsilon_tq = eps;
    cfg.loss.lambda_div = lambda_div;
    cfg.dataset.id_scenes = scenes;
    cfg.dataset.ood_eval_scenes = 150;
    cfg.dataset.min_objects = min_obj;
    cfg.dataset.max_objects = max_obj;
    cfg.dataset.near_min_size = near_lo;
    cfg.dataset.near_max_size = near_hi;
    cfg.dataset.noise_dim = noise_dim;
    cfg.dataset.near_class_bias = bias;
    cfg.model.head_hidden = head_hidden;
    cfg.model.trunk_hidden = trunk_hidden;
    cfg.dataset.feature_dim = feature_dim;
    cfg.train.epochs = epochs;

    let splits = generate_dataset(&cfg.dataset, cfg.seed).unwrap();
    let t0 = std::time::Instant::now();
    let fitres = fit(&cfg, &splits, 1).unwrap();
    let train_s = t0.elapsed().as_secs_f64();
    let last = fitres.history.last().unwrap();

    let far = run_ood_benchmark(
        &fitres.model,
        &splits.test,
        &splits.ood[&RegimeKind::FarOod],
        ScoreLevel::Image,
        &cfg.monitor,
    )
    .unwrap();
    let near = run_ood_benchmark(
        &fitres.model,
        &splits.test,
        &splits.ood[&RegimeKind::NearOod],
        ScoreLevel::Image,
        &cfg.monitor,
    )
    .unwrap();
    let dets = dbea_cli::evalrun::detect_split(&fitres.model, &splits.test).unwrap();
    let m = dbea_cli::evalrun::metrics_from_detections(&dets).unwrap();

    // diagnostics: how well does confidence ranking separate objects from bg,
    // and how close are matched boxes to ground truth
    let mut matched_iou = Vec::new();
    let mut matched_conf = Vec::new();
    for sd in &dets {
        for d in &sd.detections {
            if let Some(iou) = d.iou {
                matched_iou.push(iou);
                matched_conf.push(d.confidence);
            }
        }
    }
    let mean_iou = matched_iou.iter().sum::<f64>() / matched_iou.len().max(1) as f64;
    let mean_conf = matched_conf.iter().sum::<f64>() / matched_conf.len().max(1) as f64;
    let quartiles = |v: &mut Vec<f64>| -> (f64, f64, f64) {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (v[v.len() / 4], v[v.len() / 2], v[3 * v.len() / 4])
    };
    let mut id_usm: Vec<f64> = far.id_scores.iter().map(|s| s.image_usm).collect();
    let mut far_usm: Vec<f64> = far.ood_scores.iter().map(|s| s.image_usm).collect();
    let mut near_usm: Vec<f64> = near.ood_scores.iter().map(|s| s.image_usm).collect();
    println!(
        "eps={eps:<7} div={lambda_div:<4} seed={seed} n={scenes} ep={epochs} obj={min_obj}-{max_obj} near={near_lo}-{near_hi} nd={noise_dim} bias={bias} hh={head_hidden} th={trunk_hidden} fd={feature_dim} | base {:.3} ta {:.3} tq {:.3} | mAP {:.3} AP50 {:.3} mIoU {:.3} mConf {:.3} | id {} near {} far {} | far {:.3} near {:.3} | {:.0}s",
        last.base,
        last.ta,
        last.tq,
        m.map.unwrap_or(-1.0),
        m.ap50.unwrap_or(-1.0),
        mean_iou,
        mean_conf,
        fmt3(quartiles(&mut id_usm)),
        fmt3(quartiles(&mut near_usm)),
        fmt3(quartiles(&mut far_usm)),
        far.result.auroc,
        near.result.auroc,
        train_s
    );
}

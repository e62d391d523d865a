//! End-to-end acceptance gate. Runs as a plain binary (no test harness) and
//! prints one PASS/FAIL line per criterion; exits nonzero if any fails.

use std::io::Write as _;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sfhead::backbone::{BackboneConfig, Mode};
use sfhead::data::{SkeletonGraph, SkeletonSequence};
use sfhead::gradcheck::run_suite;
use sfhead::losses::{
    compensation_term, consistency_base, feature_redundancy_loss, modified_cosine_distance,
    LossConfig,
};
use sfhead::sf_head::{SfHead, SfHeadConfig};
use sfhead::synth::{rig_edges, synth_generate, SynthSpec, JOINT_COUNT};
use sfhead::tensor::Tensor;
use sfhead::trainer::{grid_rows, load_checkpoint, save_checkpoint, train, AblationGrid, Model, TrainConfig};

struct Gate {
    results: Vec<(usize, String, bool, String)>,
}

impl Gate {
    fn report(&mut self, idx: usize, name: &str, pass: bool, detail: String) {
        self.results.push((idx, name.to_string(), pass, detail));
    }

    fn finish(mut self) -> ExitCode {
        self.results.sort_by_key(|r| r.0);
        let mut failures = 0;
        for (idx, name, pass, detail) in &self.results {
            let verdict = if *pass { "PASS" } else { "FAIL" };
            println!("criterion {idx:2} [{verdict}] {name}: {detail}");
            if !pass {
                failures += 1;
            }
        }
        if failures == 0 {
            println!("acceptance: all criteria passed");
            ExitCode::SUCCESS
        } else {
            println!("acceptance: {failures} criteria failed");
            ExitCode::FAILURE
        }
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn bits_equal(a: &Tensor<f32>, b: &Tensor<f32>) -> bool {
    let (av, bv) = (a.to_vec(), b.to_vec());
    av.len() == bv.len() && av.iter().zip(&bv).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn param_bits(params: &[(String, Tensor<f32>)]) -> Vec<(String, Vec<u32>)> {
    params
        .iter()
        .map(|(n, p)| (n.clone(), p.to_vec().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn tiny_graph() -> SkeletonGraph {
    SkeletonGraph::new(&rig_edges(), JOINT_COUNT).unwrap()
}

fn tiny_model(seed: u64) -> Model<f32> {
    let bb = BackboneConfig::tiny(4, JOINT_COUNT);
    let head = SfHeadConfig { attach_blocks: vec![1], ..SfHeadConfig::default() };
    Model::new(bb, head, &tiny_graph(), seed)
}

/// Short training recipe reused by the identity and grid criteria.
fn short_cfg(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        warmup_epochs: 0.5,
        ..TrainConfig::desk(seed)
    }
}

fn criterion_gradients(gate: &mut Gate) {
    let t0 = Instant::now();
    let report = run_suite(0, 20);
    let elapsed = t0.elapsed();
    let worst = report
        .results
        .iter()
        .map(|r| r.max_rel_err)
        .fold(0.0f64, f64::max);
    let pass = report.all_passed() && elapsed < Duration::from_secs(300);
    if !pass {
        eprint!("{}", report.render());
    }
    gate.report(
        1,
        "gradient oracle suite",
        pass,
        format!(
            "{} checks, worst rel err {worst:.3e} (tol 1e-4), {:.1}s",
            report.results.len(),
            elapsed.as_secs_f64()
        ),
    );
}

fn criterion_distance_invariants(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let alpha: f64 = 1.0;
    let dmax = 1.0 - (-2.0 * alpha).exp();
    let mut ok = true;
    let mut worst = String::new();
    for _ in 0..10_000 {
        let u = Tensor::new(&[16], rand_vec(&mut rng, 16));
        let v = Tensor::new(&[16], rand_vec(&mut rng, 16));
        let d = modified_cosine_distance(&u, &v, alpha).item();
        if !(0.0..=dmax + 1e-9).contains(&d) {
            ok = false;
            worst = format!("range violation d={d}");
            break;
        }
        let d_uu = modified_cosine_distance(&u, &u, alpha).item();
        if (d_uu - dmax).abs() > 1e-7 {
            ok = false;
            worst = format!("d(u,u)={d_uu}, expected {dmax}");
            break;
        }
        let neg_u = u.neg();
        let d_opp = modified_cosine_distance(&u, &neg_u, alpha).item();
        if d_opp.abs() > 1e-7 {
            ok = false;
            worst = format!("d(u,-u)={d_opp}, expected 0");
            break;
        }
    }
    gate.report(
        2,
        "distance invariants",
        ok,
        if ok {
            format!("10000 pairs in [0, {dmax:.6}], aligned/opposed closed forms hold")
        } else {
            worst
        },
    );
}

fn criterion_consistency_range(gate: &mut Gate) {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut ok = true;
    let mut detail = String::new();
    for _ in 0..10_000 {
        let u = Tensor::new(&[12], rand_vec(&mut rng, 12));
        let v = Tensor::new(&[12], rand_vec(&mut rng, 12));
        let d = modified_cosine_distance(&u, &v, cfg.alpha);
        let base = consistency_base(&d, &cfg).item();
        if !(-1e-9..=cfg.m_margin + 1e-9).contains(&base) {
            ok = false;
            detail = format!("base term {base} outside [0, {}]", cfg.m_margin);
            break;
        }
    }
    // Compensation over a dense grid of distances, including both gate bands.
    if ok {
        for i in 0..=1000 {
            let dv = i as f64 / 1000.0;
            let comp = compensation_term(&Tensor::scalar(dv), &cfg).item();
            if comp > 0.0 {
                ok = false;
                detail = format!("compensation {comp} > 0 at d={dv}");
                break;
            }
            let gated = dv.min(1.0 - dv) <= cfg.epsilon;
            if gated && comp != 0.0 {
                ok = false;
                detail = format!("compensation {comp} nonzero in gate region at d={dv}");
                break;
            }
        }
    }
    gate.report(
        3,
        "consistency term ranges",
        ok,
        if ok {
            format!(
                "10000 base terms in [0, {}]; compensation non-positive, zero in gates",
                cfg.m_margin
            )
        } else {
            detail
        },
    );
}

fn criterion_redundancy_fixtures(gate: &mut Gate) {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut ok = true;
    let mut detail = String::new();

    // Single pair: the contrastive sum over one candidate is identically zero.
    let u = Tensor::new(&[8], rand_vec(&mut rng, 8));
    let v = Tensor::new(&[8], rand_vec(&mut rng, 8));
    let single = feature_redundancy_loss(&[u.clone()], &[v.clone()], &cfg)
        .unwrap()
        .item();
    if single.abs() > 1e-9 {
        ok = false;
        detail = format!("N=1 loss {single}, expected 0");
    }

    // Full uniformity: identical rows make every pairwise distance equal.
    if ok {
        let fs: Vec<Tensor<f64>> = (0..4).map(|_| u.clone()).collect();
        let ft: Vec<Tensor<f64>> = (0..4).map(|_| v.clone()).collect();
        let uniform = feature_redundancy_loss(&fs, &ft, &cfg).unwrap().item();
        let expect = (4.0f64).ln() / 2.0;
        if (uniform - expect).abs() > 1e-6 {
            ok = false;
            detail = format!("uniform N=4 loss {uniform}, expected {expect}");
        }
    }

    // Literal (printed) form: constant log(N)/2 regardless of the features.
    if ok {
        let literal_cfg = LossConfig { frl_literal: true, ..cfg };
        let expect = (4.0f64).ln() / 2.0;
        for _ in 0..100 {
            let fs: Vec<Tensor<f64>> =
                (0..4).map(|_| Tensor::new(&[8], rand_vec(&mut rng, 8))).collect();
            let ft: Vec<Tensor<f64>> =
                (0..4).map(|_| Tensor::new(&[8], rand_vec(&mut rng, 8))).collect();
            let lit = feature_redundancy_loss(&fs, &ft, &literal_cfg).unwrap().item();
            if (lit - expect).abs() > 1e-6 {
                ok = false;
                detail = format!("literal-form loss {lit} varies from log(4)/2");
                break;
            }
        }
    }

    gate.report(
        4,
        "redundancy loss fixtures",
        ok,
        if ok {
            "N=1 zero, uniform N=4 = log(4)/2, literal form constant".to_string()
        } else {
            detail
        },
    );
}

fn criterion_parameter_budget(gate: &mut Gate) {
    let bb = BackboneConfig::paper_scale(4, JOINT_COUNT);
    let cfg = SfHeadConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let head = SfHead::<f32>::new(cfg, &bb.block_channels, &mut rng);
    let count = head.param_count();

    // The CLI must print the same exact number on a full-scale train start.
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let bin = env!("CARGO_BIN_EXE_sfhead");
    let synth = Command::new(bin)
        .args(["synth", "--seed", "5", "--samples-per-class", "4", "--t-target", "8", "--out"])
        .arg(&data)
        .output()
        .expect("spawn synth");
    let train_out = Command::new(bin)
        .args(["train", "--profile", "paper", "--epochs", "1", "--batch-size", "8", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .output()
        .expect("spawn train");
    let stdout = String::from_utf8_lossy(&train_out.stdout).to_string();
    let printed = stdout
        .lines()
        .find_map(|l| l.strip_prefix("auxiliary head parameters: "))
        .and_then(|n| n.trim().parse::<usize>().ok());

    let pass = synth.status.success()
        && train_out.status.success()
        && count < 10_000
        && printed == Some(count);
    gate.report(
        5,
        "head parameter budget",
        pass,
        format!("{count} parameters at full scale (< 10000), CLI prints {printed:?}"),
    );
}

fn criterion_inference_transparency(gate: &mut Gate) {
    let dir = tempfile::tempdir().unwrap();
    let src = tiny_model(3);
    let with_head = dir.path().join("with_head.ckpt");
    let stripped = dir.path().join("stripped.ckpt");
    save_checkpoint(&with_head, &src, true, 3, 0).unwrap();
    save_checkpoint(&stripped, &src, false, 3, 0).unwrap();

    // Fresh models with different initialization draws.
    let a = tiny_model(100);
    let b = tiny_model(200);
    let info_a = load_checkpoint(&with_head, &a).unwrap();
    let info_b = load_checkpoint(&stripped, &b).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut all_equal = info_a.head_loaded && !info_b.head_loaded;
    for _ in 0..100 {
        let vals: Vec<f32> = (0..3 * 16 * JOINT_COUNT).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let x = Tensor::new(&[3, 16, JOINT_COUNT], vals);
        let mut r1 = ChaCha8Rng::seed_from_u64(0);
        let mut r2 = ChaCha8Rng::seed_from_u64(0);
        let (la, _) = a.backbone.forward(&x, Mode::Eval, &[], &mut r1);
        let (lb, _) = b.backbone.forward(&x, Mode::Eval, &[], &mut r2);
        if !bits_equal(&la, &lb) {
            all_equal = false;
            break;
        }
    }
    gate.report(
        6,
        "inference transparency",
        all_equal,
        "eval logits bitwise equal on 100 inputs, head present vs stripped".to_string(),
    );
}

fn criterion_ablation_identity(gate: &mut Gate, sequences: &[SkeletonSequence], classes: &[String]) {
    // Run A: every head/loss switch off, loss weights zeroed.
    let cfg_a = TrainConfig {
        sste: false,
        acfa: false,
        frcl: false,
        acda: false,
        atda: false,
        asda: false,
        ..short_cfg(11, 3)
    };
    let loss_a = LossConfig { lambda_con: 0.0, lambda_red: 0.0, ..LossConfig::default() };
    // Run B: a backbone-only trajectory — the auxiliary path disabled by the
    // single top-level switch, with loss weights left at their defaults.
    let cfg_b = TrainConfig { frcl: false, ..short_cfg(11, 3) };
    let loss_b = LossConfig::default();

    let model_a = tiny_model(11);
    let model_b = tiny_model(11);
    let head_init = param_bits(&model_a.head.params());
    let mut buf_a = Vec::new();
    let mut buf_b = Vec::new();
    train(&model_a, sequences, classes, &cfg_a, &loss_a, Some(&mut buf_a)).unwrap();
    train(&model_b, sequences, classes, &cfg_b, &loss_b, Some(&mut buf_b)).unwrap();

    let metrics_equal = buf_a == buf_b;
    let backbone_equal = model_a
        .backbone
        .params()
        .iter()
        .zip(model_b.backbone.params().iter())
        .all(|((_, p), (_, q))| bits_equal(p, q));
    let head_untouched = param_bits(&model_a.head.params()) == head_init;
    let pass = metrics_equal && backbone_equal && head_untouched;
    gate.report(
        7,
        "ablation identity",
        pass,
        format!(
            "3-epoch trajectories bitwise equal: metrics {metrics_equal}, backbone {backbone_equal}, head untouched {head_untouched}"
        ),
    );
}

fn criterion_grid_shape(gate: &mut Gate, sequences: &[SkeletonSequence], classes: &[String]) {
    let base = short_cfg(13, 1);
    let mut ok = true;
    let mut detail = String::new();

    for grid in [AblationGrid::Submodules, AblationGrid::Dimensions] {
        let rows = grid_rows(grid, &base);
        let mut combos: Vec<(bool, bool, bool)> = rows
            .iter()
            .map(|c| match grid {
                AblationGrid::Submodules => (c.sste, c.acfa, c.frcl),
                AblationGrid::Dimensions => (c.acda, c.atda, c.asda),
            })
            .collect();
        combos.sort();
        combos.dedup();
        if rows.len() != 8 || combos.len() != 8 {
            ok = false;
            detail = format!("grid emitted {} rows, {} distinct combos", rows.len(), combos.len());
        }
    }

    // Disabled components must leave their parameters untouched (exactly-zero
    // gradients) and zero their loss terms.
    if ok {
        'outer: for grid in [AblationGrid::Submodules, AblationGrid::Dimensions] {
            for cfg in grid_rows(grid, &base) {
                let model = tiny_model(13);
                let init = param_bits(&model.head.params());
                let mut buf = Vec::new();
                let outcome =
                    train(&model, sequences, classes, &cfg, &LossConfig::default(), Some(&mut buf))
                        .unwrap();
                let after = param_bits(&model.head.params());
                let frozen = |needle: &str| -> bool {
                    init.iter()
                        .zip(after.iter())
                        .filter(|(a, _)| a.0.contains(needle))
                        .all(|(a, b)| a.1 == b.1)
                };
                let checks: Vec<(bool, bool, &str)> = vec![
                    (cfg.frcl, frozen(""), "all head parameters"),
                    (cfg.frcl && cfg.sste, frozen("phi_"), "extraction parameters"),
                    (cfg.frcl && cfg.acfa, frozen("psi_"), "gate parameters"),
                    (cfg.frcl && cfg.acfa && cfg.acda, frozen("psi_c"), "channel gate"),
                    (cfg.frcl && cfg.acfa && cfg.atda, frozen("psi_t"), "temporal gate"),
                    (cfg.frcl && cfg.acfa && cfg.asda, frozen("psi_s"), "spatial gate"),
                ];
                for (enabled, still_frozen, what) in checks {
                    if !enabled && !still_frozen {
                        ok = false;
                        detail = format!("{what} moved despite being disabled ({:?})", cfg);
                        break 'outer;
                    }
                }
                if !cfg.frcl {
                    let m = &outcome.metrics[0];
                    if m.con != 0.0 || m.red != 0.0 || m.total != m.ce {
                        ok = false;
                        detail = "auxiliary loss terms nonzero with the auxiliary path off".into();
                        break 'outer;
                    }
                }
            }
        }
    }

    gate.report(
        9,
        "ablation grid shape",
        ok,
        if ok {
            "both grids emit the 8 combinations; disabled parts contribute exactly zero".to_string()
        } else {
            detail
        },
    );
}

fn criteria_efficacy_and_sanity(gate: &mut Gate) {
    let t0 = Instant::now();
    let spec = SynthSpec::default_four_class(200, 32);
    let (manifest, sequences) = synth_generate(&spec, 7).unwrap();
    let graph = tiny_graph();
    let bb = BackboneConfig::tiny(4, JOINT_COUNT);
    // Benchmark recipe: one channel group (four-channel branches at tiny
    // width) and the desk loss weights/temperature.
    let head_cfg = SfHeadConfig { attach_blocks: vec![1], groups: 1, ..SfHeadConfig::default() };

    let mut full_accs = Vec::new();
    let mut base_accs = Vec::new();
    let mut sanity_ok = true;
    let mut sanity_detail = String::new();
    for seed in 0..5u64 {
        let full_cfg = TrainConfig::desk(seed);
        let base_cfg = TrainConfig {
            sste: false,
            acfa: false,
            frcl: false,
            acda: false,
            atda: false,
            asda: false,
            ..TrainConfig::desk(seed)
        };
        let full_model = Model::new(bb.clone(), head_cfg.clone(), &graph, seed);
        let base_model = Model::new(bb.clone(), head_cfg.clone(), &graph, seed);
        let full = train(
            &full_model,
            &sequences,
            &manifest.class_names,
            &full_cfg,
            &LossConfig::desk(),
            None,
        )
        .unwrap();
        let base = train(
            &base_model,
            &sequences,
            &manifest.class_names,
            &base_cfg,
            &LossConfig::desk(),
            None,
        )
        .unwrap();
        full_accs.push(full.final_val_acc());
        base_accs.push(base.final_val_acc());

        let (e1, e10) = (full.metrics[0].total, full.metrics[9].total);
        if e10 >= 0.5 * e1 {
            sanity_ok = false;
            sanity_detail = format!("seed {seed}: epoch-10 loss {e10:.4} >= half of epoch-1 {e1:.4}");
        }
        eprintln!(
            "  seed {seed}: full {:.2}% vs baseline {:.2}%, loss {:.3} -> {:.3}",
            full.final_val_acc(),
            base.final_val_acc(),
            e1,
            e10
        );
    }
    let elapsed = t0.elapsed();
    let mean_full = full_accs.iter().sum::<f64>() / 5.0;
    let mean_base = base_accs.iter().sum::<f64>() / 5.0;
    let wins = full_accs.iter().zip(&base_accs).filter(|(f, b)| f > b).count();
    let pass8 = mean_full - mean_base >= 2.0 && wins >= 4 && elapsed < Duration::from_secs(1800);
    gate.report(
        8,
        "desk-scale efficacy",
        pass8,
        format!(
            "mean val acc {mean_full:.2}% vs baseline {mean_base:.2}% (+{:.2} pp), wins {wins}/5, {:.0}s",
            mean_full - mean_base,
            elapsed.as_secs_f64()
        ),
    );
    gate.report(
        10,
        "training sanity",
        sanity_ok,
        if sanity_ok {
            "epoch-10 total loss under half of epoch-1 for all 5 seeds".to_string()
        } else {
            sanity_detail
        },
    );
}

fn main() -> ExitCode {
    let mut gate = Gate { results: Vec::new() };

    criterion_gradients(&mut gate);
    criterion_distance_invariants(&mut gate);
    criterion_consistency_range(&mut gate);
    criterion_redundancy_fixtures(&mut gate);
    criterion_parameter_budget(&mut gate);
    criterion_inference_transparency(&mut gate);

    // Small shared dataset for the trajectory criteria.
    let spec = SynthSpec::default_four_class(20, 16);
    let (manifest, sequences) = synth_generate(&spec, 9).unwrap();
    criterion_ablation_identity(&mut gate, &sequences, &manifest.class_names);
    criterion_grid_shape(&mut gate, &sequences, &manifest.class_names);

    criteria_efficacy_and_sanity(&mut gate);

    std::io::stdout().flush().ok();
    gate.finish()
}

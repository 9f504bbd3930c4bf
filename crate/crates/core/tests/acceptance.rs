//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL
//! verdict line; the test fails if any criterion fails. Trained
//! checkpoints are cached under target/acceptance-cache, so a rerun
//! skips training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rnrdp_core::denoiser::{forward_batch, init_params, DenoiserConfig, PredictKind};
use rnrdp_core::env::{gen_demos, load_demos, make_env, save_demos};
use rnrdp_core::harness::{
    evaluate, load_checkpoint, mode_probe, save_checkpoint, train_or_load, EvalReport, InitKind,
    Method, RunConfig,
};
use rnrdp_core::numkit::{grad_check, ParamStore, Tape, Tensor};
use rnrdp_core::relay::{ladder_init, relay_step, DenoiseModel};
use rnrdp_core::schedule::{
    build_schedule, ddim_step, perturb, reverse_step, sample_levels, BetaKind, LevelMode,
    LevelVector,
};
use rnrdp_core::trainer::train_run;
use rnrdp_core::Result;
use std::path::{Path, PathBuf};

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { name, pass, detail }
}

fn cache_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance-cache");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn eval_cfg(cfg: &RunConfig, cache: &Path) -> Result<EvalReport> {
    let ckpt = train_or_load(cfg, cache)?;
    evaluate(&ckpt)
}

// -- 1: schedule closed-form behavior ------------------------------------

fn schedule_exactness() -> Result<Verdict> {
    // alpha_bar starts at 1 and decreases strictly
    for kind in [BetaKind::LinearBeta, BetaKind::CosineBeta] {
        for f in [2usize, 8, 32] {
            let s = build_schedule(f, kind, 1e-4, if kind == BetaKind::LinearBeta { 0.02 } else { 0.5 })?;
            if s.alpha_bar(0) != 1.0 {
                return Ok(verdict("schedule exactness", false, "alpha_bar(0) != 1".into()));
            }
            for k in 1..=f {
                if !(s.alpha_bar(k) < s.alpha_bar(k - 1) && s.alpha_bar(k) > 0.0) {
                    return Ok(verdict(
                        "schedule exactness",
                        false,
                        format!("alpha_bar not strictly decreasing at k={k}, f={f}"),
                    ));
                }
            }
        }
    }

    // perturb inverts exactly given the noise that was injected
    let s = build_schedule(8, BetaKind::CosineBeta, 1e-4, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let actions = Tensor::randn(&[8, 2], &mut rng);
    let eps = Tensor::randn(&[8, 2], &mut rng);
    let levels = LevelVector::new(vec![1, 3, 8, 2, 5, 8, 1, 4]);
    let noisy = perturb(&actions, &levels, &eps, &s)?;
    let mut max_inv = 0.0f64;
    for j in 0..8 {
        let abar = s.alpha_bar(levels.levels()[j]);
        let (sa, se) = (abar.sqrt(), (1.0 - abar).sqrt());
        for c in 0..2 {
            let x0 = (noisy.at2(j, c) - se * eps.at2(j, c)) / sa;
            max_inv = max_inv.max((x0 - actions.at2(j, c)).abs());
        }
    }
    if max_inv > 1e-10 {
        return Ok(verdict("schedule exactness", false, format!("perturb inversion err {max_inv:.2e}")));
    }

    // hand-computed f=2 case: beta = [0.1, 0.2], so
    // alpha_bar(1) = 0.9, alpha_bar(2) = 0.72
    let s2 = build_schedule(2, BetaKind::LinearBeta, 0.1, 0.2)?;
    let (a, e, z) = (0.37, -0.81, 0.53);
    let mut max_hand = (s2.alpha_bar(1) - 0.9).abs().max((s2.alpha_bar(2) - 0.72).abs());

    // reverse from k=2: mean (a - beta/sqrt(1-abar) e)/sqrt(alpha),
    // sigma^2 = beta (1-abar_prev)/(1-abar)
    let want = (a - 0.2 / (1.0f64 - 0.72).sqrt() * e) / 0.8f64.sqrt()
        + (0.2f64 * (1.0 - 0.9) / (1.0 - 0.72)).sqrt() * z;
    let got = reverse_step(&[a], &[e], 2, &[z], &s2)?;
    max_hand = max_hand.max((got[0] - want).abs());

    // reverse from k=1 is noise-free
    let want = (a - 0.1 / (1.0f64 - 0.9).sqrt() * e) / 0.9f64.sqrt();
    let got = reverse_step(&[a], &[e], 1, &[z], &s2)?;
    max_hand = max_hand.max((got[0] - want).abs());

    // ddim 2 -> 1 and 2 -> 0 via the posterior-free update
    let x0 = (a - (1.0f64 - 0.72).sqrt() * e) / 0.72f64.sqrt();
    let want = 0.9f64.sqrt() * x0 + 0.1f64.sqrt() * e;
    let got = ddim_step(&[a], &[e], 2, 1, &s2)?;
    max_hand = max_hand.max((got[0] - want).abs());
    let got = ddim_step(&[a], &[e], 2, 0, &s2)?;
    max_hand = max_hand.max((got[0] - x0).abs());

    Ok(verdict(
        "schedule exactness",
        max_hand <= 1e-12,
        format!("perturb inversion {max_inv:.2e}, hand-formula {max_hand:.2e}"),
    ))
}

// -- 2: reverse-mode gradients vs central differences --------------------

fn autodiff_soundness() -> Result<Verdict> {
    let mut worst = 0.0f64;
    for predict in [PredictKind::Noise, PredictKind::Action] {
        let c = DenoiserConfig {
            f: 4,
            c_a: 2,
            c_state: 3,
            t_o: 2,
            c_emb: 6,
            hidden: 8,
            depth: 3,
            predict,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut ps = init_params(&c, &mut rng)?;
        let noisy = Tensor::randn(&[8, 2], &mut rng);
        let obs = Tensor::randn(&[2, 6], &mut rng);
        let target = Tensor::randn(&[8, 2], &mut rng);
        let levels = vec![LevelVector::linear(4), LevelVector::new(vec![2, 4, 1, 3])];

        let loss = |p: &ParamStore| -> Result<f64> {
            let mut tape = Tape::new();
            let rec = forward_batch(&mut tape, &c, p, &noisy, &levels, &obs)?;
            let t = tape.leaf(target.clone());
            let l = tape.mse(rec.output, t)?;
            Ok(tape.value(l).item())
        };

        let mut tape = Tape::new();
        let rec = forward_batch(&mut tape, &c, &ps, &noisy, &levels, &obs)?;
        let t = tape.leaf(target.clone());
        let l = tape.mse(rec.output, t)?;
        let grads = tape.backward(l)?;
        for (name, var) in &rec.param_vars {
            if let Some(g) = &grads[var.index()] {
                ps.add_grad(name, g)?;
            }
        }
        worst = worst.max(grad_check(&mut ps, 1e-5, loss)?);
    }
    Ok(verdict(
        "autodiff soundness",
        worst < 1e-4,
        format!("max relative gradient error {worst:.2e}"),
    ))
}

// -- 3: relay buffer level/NFE invariants --------------------------------

struct ZeroModel {
    f: usize,
}

impl DenoiseModel for ZeroModel {
    fn predict(&self, noisy: &Tensor, _: &LevelVector, _: &Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros(noisy.shape()))
    }
    fn kind(&self) -> PredictKind {
        PredictKind::Noise
    }
    fn frames(&self) -> usize {
        self.f
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn obs_shape(&self) -> (usize, usize) {
        (1, 1)
    }
    fn clip(&self) -> Option<f64> {
        None
    }
}

fn relay_invariants() -> Result<Verdict> {
    let mut detail = String::new();
    for f in [2usize, 8, 32] {
        let model = ZeroModel { f };
        let sched = build_schedule(f, BetaKind::LinearBeta, 1e-4, 0.02)?;
        let obs = Tensor::zeros(&[1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(f as u64);
        let mut buf = ladder_init(&model, &obs, &sched, false, &mut rng)?;
        // one NFE per executed action amortizes the f-1 warm-up passes
        // once T clears 50 (f-1)
        let t_steps = 100.max(50 * (f - 1));
        for _ in 0..t_steps {
            relay_step(&mut buf, &model, &obs, &sched, false, &mut rng)?;
            if !buf.is_steady() {
                return Ok(verdict(
                    "relay invariants",
                    false,
                    format!("levels {:?} not the 1..{f} ladder", buf.levels()),
                ));
            }
        }
        let expect_nfes = (f - 1) + t_steps;
        let per_action = buf.nfe_count as f64 / buf.actions_executed as f64;
        if buf.nfe_count != expect_nfes || buf.actions_executed != t_steps || per_action > 1.02 {
            return Ok(verdict(
                "relay invariants",
                false,
                format!(
                    "f={f}: nfes {} (want {expect_nfes}), actions {}, nfes/a {per_action:.4}",
                    buf.nfe_count, buf.actions_executed
                ),
            ));
        }
        detail.push_str(&format!("f={f}: nfes/a {per_action:.4} over {t_steps} actions; "));
    }
    Ok(verdict("relay invariants", true, detail.trim_end_matches("; ").to_string()))
}

// -- 4: mixture level-sampler statistics ---------------------------------

fn mixture_statistics() -> Result<Verdict> {
    let n = 10_000usize;
    let f = 8usize;
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let mut linear = 0usize;
    for _ in 0..n {
        let lv = sample_levels(LevelMode::Mixture { p_linear: 0.4 }, f, &mut rng)?;
        if lv.len() != f {
            return Ok(verdict("mixture statistics", false, format!("draw length {}", lv.len())));
        }
        if lv.is_linear() {
            linear += 1;
        } else if lv.levels().iter().any(|&k| k < 1 || k > f) {
            return Ok(verdict(
                "mixture statistics",
                false,
                format!("level outside 1..={f} in {:?}", lv.levels()),
            ));
        }
    }
    let frac = linear as f64 / n as f64;
    let pass = (frac - 0.4).abs() <= 0.015 && linear > 0 && linear < n;
    Ok(verdict(
        "mixture statistics",
        pass,
        format!("linear fraction {frac:.4} over {n} draws"),
    ))
}

// -- 5-8: trained-policy comparisons -------------------------------------

fn rnr_det(env: &str) -> RunConfig {
    let mut cfg = RunConfig::defaults(env);
    cfg.deterministic = true;
    cfg
}

fn dp(env: &str, t_a: usize) -> RunConfig {
    let mut cfg = RunConfig::defaults(env);
    cfg.method = Method::DpDdpm;
    cfg.t_a = t_a;
    cfg
}

fn ddim(env: &str, s: usize) -> RunConfig {
    let mut cfg = RunConfig::defaults(env);
    cfg.method = Method::DpDdim;
    cfg.s = s;
    cfg
}

fn mode_consistency(cache: &Path, relay: &EvalReport) -> Result<Verdict> {
    let chunk8 = eval_cfg(&dp("bimodal_reach", 8), cache)?;
    let chunk1 = eval_cfg(&dp("bimodal_reach", 1), cache)?;
    let gap = chunk1.success_rate <= chunk8.success_rate - 0.10;
    let holds = relay.success_rate >= chunk8.success_rate - 0.05;
    let switches = chunk1.mean_mode_switches >= 2.0 * relay.mean_mode_switches;
    Ok(verdict(
        "mode consistency",
        gap && holds && switches,
        format!(
            "success chunk(8) {:.3}, chunk(1) {:.3}, relay {:.3}; switches/ep chunk(1) {:.2} vs relay {:.2}",
            chunk8.success_rate,
            chunk1.success_rate,
            relay.success_rate,
            chunk1.mean_mode_switches,
            relay.mean_mode_switches
        ),
    ))
}

fn responsiveness(cache: &Path) -> Result<Verdict> {
    let relay = eval_cfg(&rnr_det("drift_push"), cache)?;
    let chunk8 = eval_cfg(&dp("drift_push", 8), cache)?;
    Ok(verdict(
        "responsiveness",
        relay.success_rate >= chunk8.success_rate + 0.10,
        format!(
            "success relay {:.3} vs chunk(8) {:.3}",
            relay.success_rate, chunk8.success_rate
        ),
    ))
}

fn efficiency(cache: &Path, relay: &EvalReport) -> Result<Verdict> {
    let ddim8 = eval_cfg(&ddim("bimodal_reach", 8), cache)?;
    let ddim1 = eval_cfg(&ddim("bimodal_reach", 1), cache)?;
    let pass = relay.success_rate >= ddim8.success_rate - 0.02
        && relay.success_rate >= ddim1.success_rate + 0.20;
    Ok(verdict(
        "efficiency at one nfe per action",
        pass,
        format!(
            "success relay {:.3} (nfes/a {:.3}), ddim(8) {:.3} (nfes/a {:.3}), ddim(1) {:.3}",
            relay.success_rate,
            relay.nfes_per_action(),
            ddim8.success_rate,
            ddim8.nfes_per_action(),
            ddim1.success_rate
        ),
    ))
}

fn ablation_directions(cache: &Path, mixture: &EvalReport) -> Result<Verdict> {
    let mut linear = rnr_det("bimodal_reach");
    linear.schedule_mode = LevelMode::Linear;
    let mut random = rnr_det("bimodal_reach");
    random.schedule_mode = LevelMode::Random;
    let mut pure = rnr_det("bimodal_reach");
    pure.init = InitKind::PureNoise;
    let mut action = rnr_det("bimodal_reach");
    action.predict = PredictKind::Action;

    let linear = eval_cfg(&linear, cache)?;
    let random = eval_cfg(&random, cache)?;
    let pure = eval_cfg(&pure, cache)?;
    let action = eval_cfg(&action, cache)?;

    let scheme_ok =
        mixture.success_rate >= linear.success_rate.max(random.success_rate) + 0.05;
    let init_ok = mixture.success_rate >= pure.success_rate + 0.03;
    let predict_ok = mixture.success_rate >= action.success_rate + 0.05;
    Ok(verdict(
        "ablation directions",
        scheme_ok && init_ok && predict_ok,
        format!(
            "mixture {:.3} vs linear {:.3} / random {:.3} [{}]; laddering vs pure-noise {:.3} [{}]; noise vs action {:.3} [{}]",
            mixture.success_rate,
            linear.success_rate,
            random.success_rate,
            if scheme_ok { "ok" } else { "fail" },
            pure.success_rate,
            if init_ok { "ok" } else { "fail" },
            action.success_rate,
            if predict_ok { "ok" } else { "fail" }
        ),
    ))
}

// -- 9: action-distribution bimodality at the ambiguous start ------------

fn multimodality(cache: &Path) -> Result<Verdict> {
    let ckpt = train_or_load(&RunConfig::defaults("bimodal_reach"), cache)?;
    let mut env = make_env("bimodal_reach")?;
    let state = env.reset(0);
    drop(env);
    let report = mode_probe(&ckpt, &state, 1000, 0)?;
    Ok(verdict(
        "multimodality preserved",
        report.bimodal && report.masses[1] >= 0.2,
        format!("cluster masses {:.3} / {:.3}", report.masses[0], report.masses[1]),
    ))
}

// -- 10: determinism and file round trips --------------------------------

fn determinism_persistence(cache: &Path) -> Result<Verdict> {
    let mut cfg = RunConfig::defaults("bimodal_reach");
    cfg.steps = 40;
    cfg.warmup = 5;
    cfg.hidden = 16;
    cfg.depth = 2;
    cfg.c_emb = 8;
    cfg.demos = 8;

    // same seed twice must give the identical loss curve
    let ds = gen_demos(&cfg.env_id, cfg.demos, cfg.demo_seed)?;
    let dcfg = cfg.denoiser_config(ds.obs_dim(), ds.act_dim());
    let sched = build_schedule(cfg.f, cfg.beta_kind, cfg.beta1, cfg.beta_f)?;
    let run_a = train_run(&ds, &dcfg, &cfg.train_config(), &sched)?;
    let run_b = train_run(&ds, &dcfg, &cfg.train_config(), &sched)?;
    if run_a.curve != run_b.curve {
        return Ok(verdict("determinism and persistence", false, "loss curves differ".into()));
    }

    let dir = tempfile::tempdir()?;

    // demo file round trip and magic rejection
    let demo_path = dir.path().join("d.demo");
    save_demos(&ds, &demo_path)?;
    if load_demos(&demo_path)? != ds {
        return Ok(verdict("determinism and persistence", false, "demo round trip differs".into()));
    }
    let mut bytes = std::fs::read(&demo_path)?;
    bytes[0] ^= 0xff;
    std::fs::write(&demo_path, &bytes)?;
    if load_demos(&demo_path).is_ok() {
        return Ok(verdict("determinism and persistence", false, "corrupt demo accepted".into()));
    }

    // checkpoint round trip is bitwise after f32 quantization
    let mut ckpt = train_or_load(&cfg, cache)?;
    ckpt.quantize();
    let ckpt_path = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &ckpt_path)?;
    let back = load_checkpoint(&ckpt_path)?;
    if back.config != ckpt.config || back.sched != ckpt.sched || back.norm_stats != ckpt.norm_stats
    {
        return Ok(verdict("determinism and persistence", false, "checkpoint metadata differs".into()));
    }
    for (a, b) in [(&ckpt.params, &back.params), (&ckpt.ema, &back.ema)] {
        for name in a.names().map(str::to_string).collect::<Vec<_>>() {
            if a.get(&name)?.data() != b.get(&name)?.data() {
                return Ok(verdict(
                    "determinism and persistence",
                    false,
                    format!("array {name} differs after round trip"),
                ));
            }
        }
    }
    let mut bytes = std::fs::read(&ckpt_path)?;
    bytes[0] ^= 0xff;
    std::fs::write(&ckpt_path, &bytes)?;
    if load_checkpoint(&ckpt_path).is_ok() {
        return Ok(verdict("determinism and persistence", false, "corrupt checkpoint accepted".into()));
    }

    Ok(verdict(
        "determinism and persistence",
        true,
        format!("{} loss-curve rows bitwise equal; round trips exact", run_a.curve.len()),
    ))
}

// -- driver --------------------------------------------------------------

#[test]
fn acceptance() {
    let cache = cache_dir();
    // shared across the mode-consistency, efficiency, and ablation checks
    let relay_det = eval_cfg(&rnr_det("bimodal_reach"), &cache).expect("relay eval");

    let verdicts = vec![
        schedule_exactness().expect("criterion 1"),
        autodiff_soundness().expect("criterion 2"),
        relay_invariants().expect("criterion 3"),
        mixture_statistics().expect("criterion 4"),
        mode_consistency(&cache, &relay_det).expect("criterion 5"),
        responsiveness(&cache).expect("criterion 6"),
        efficiency(&cache, &relay_det).expect("criterion 7"),
        ablation_directions(&cache, &relay_det).expect("criterion 8"),
        multimodality(&cache).expect("criterion 9"),
        determinism_persistence(&cache).expect("criterion 10"),
    ];

    let mut failed = Vec::new();
    for (i, v) in verdicts.iter().enumerate() {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {:2} {} - {}", i + 1, v.name, v.detail);
        if !v.pass {
            failed.push(format!("{} ({})", v.name, v.detail));
        }
    }
    assert!(failed.is_empty(), "failed criteria: {}", failed.join("; "));
}

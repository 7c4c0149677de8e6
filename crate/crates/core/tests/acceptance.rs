//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 1 4 5`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use hapfuse_core::analysis::eval::{ablation_suite, generalization_suite, mi_suite, run_eval, EvalReport};
use hapfuse_core::analysis::metrics::{cabinet_score, latch_score_of, CABINET_WEIGHTS};
use hapfuse_core::analysis::mi::estimate_mi;
use hapfuse_core::autograd::{Mat, Tape};
use hapfuse_core::config::Objective;
use hapfuse_core::fusion::{Bbfm, CrossAttendBlock, SelfAttention};
use hapfuse_core::gradcheck;
use hapfuse_core::io::{checkpoint, dataset};
use hapfuse_core::nn::{Builder, ParamStore, LN_EPS};
use hapfuse_core::policy::diffusion::{forward_diffuse, mix, posterior, posterior_mean_eps, predict_x0, NoiseSchedule};
use hapfuse_core::policy::train::{train_policy, TrainSet};
use hapfuse_core::world::{expert_episode, generate_episodes, pour, World};
use hapfuse_core::{rng, Episode, FusionMode, Policy, RunConfig, WorldState};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};

type Verdict = Result<String, String>;

fn randn(seed: u64, rows: usize, cols: usize) -> Mat {
    let mut r = rng::stream(seed, "acceptance");
    Mat::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut r))
}

fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn desk_config() -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")).expect("desk config")
}

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.pipeline.mel_bins = 6;
    cfg.pipeline.window_frames = 4;
    cfg.pipeline.n_fft = 256;
    cfg.pipeline.points = 8;
    cfg.model.dim = 4;
    cfg.model.audio_channels = 3;
    cfg.model.point_hidden = 5;
    cfg.model.proprio_hidden = 5;
    cfg.model.gate_hidden = 5;
    cfg.model.denoiser_hidden = 6;
    cfg.model.time_embed = 4;
    cfg.model.diffusion_steps = 10;
    cfg.model.inference_steps = 4;
    cfg.model.horizon = 3;
    cfg.model.exec_actions = 2;
    cfg.train.batch = 3;
    cfg.train.steps = 8;
    cfg.train.warmup = 2;
    cfg
}

// 1. Analytic gradients of the latent norm and the behavior-cloning loss
// against central differences, for every input and parameter group.
fn gradients(episodes: &[Episode]) -> Verdict {
    let t0 = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut configs = 0;
    for i in 0..24u64 {
        let mut cfg = tiny_config();
        let mode = FusionMode::ALL[i as usize % 6];
        cfg.model.fusion = mode.as_str().into();
        cfg.model.heads = if i % 4 == 3 { 2 } else { 1 };
        cfg.pipeline.frames_stacked = 1 + (i as usize / 6) % 2;
        cfg.model.objective = if i % 2 == 0 { Objective::Epsilon } else { Objective::Sample };
        cfg.train.seed = i;
        let data = TrainSet::new(episodes, &cfg).map_err(|e| e.to_string())?;
        let mut policy = Policy::new(&cfg, data.fit_norm().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        // Zero-initialized layers would hide whole paths from the check.
        for id in 0..policy.store.len() {
            let dim = policy.store.value(id).dim();
            let noise = randn(1000 + 97 * i + id as u64, dim.0, dim.1) * 0.3;
            *policy.store.value_mut(id) += &noise;
        }
        let idx = [0, 7 + i as usize, 30];
        let (batch, acts) = data.batch(&idx, &policy.norm).map_err(|e| e.to_string())?;
        let (ks, noise) = policy.draw_noise(idx.len(), &mut rng::indexed_stream(i, "acceptance.noise", 0));
        let inputs = [batch.audio.clone(), batch.points.clone(), batch.proprio.clone()];
        let n_obs = batch.n_obs;
        let latent = |t: &mut Tape, v: &[hapfuse_core::autograd::Var]| {
            let tok = policy.encoders.forward(t, v[0], v[1], v[2]);
            policy.fuser.forward(t, &tok, n_obs).z
        };
        let norm_z = gradcheck::check(
            &policy.store,
            &inputs,
            |t, v| {
                let z = latent(t, v);
                t.sum_sq(z)
            },
            12,
            i,
        );
        let bc = gradcheck::check(
            &policy.store,
            &inputs,
            |t, v| {
                let z = latent(t, v);
                policy.loss_given(t, z, &acts, &ks, &noise)
            },
            12,
            i + 100,
        );
        for (what, res) in [("|z|^2", &norm_z), ("bc_loss", &bc)] {
            for c in res.iter().filter(|c| c.checked > 0 && c.name != "pretrain") {
                // The latent does not depend on the denoiser.
                if what == "|z|^2" && c.name == "denoiser" {
                    continue;
                }
                if c.max_rel > worst.0 {
                    worst = (c.max_rel, format!("{what} wrt {} in {mode}", c.name));
                }
            }
        }
        configs += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst.0 < 1e-4 && configs >= 20 && secs < 120.0,
        format!("{configs} configs, worst relative error {:.2e} ({}), {secs:.1}s", worst.0, worst.1),
    )
}

// 2. Structural identities of the fusion building blocks and encoders.
fn structure() -> Verdict {
    const D: usize = 6;
    let mut notes = Vec::new();

    let mut store = ParamStore::default();
    let bbfm = Bbfm::new(&mut Builder::new(&mut store, "", 3), D, 5, 1);
    let mut t = Tape::new(&store);
    let (xa, xp, xs) = (t.constant(randn(1, 4, D)), t.constant(randn(2, 4, D)), t.constant(randn(3, 4, D)));
    let bv = bbfm.forward(&mut t, xa, xp, xs, 2);
    let film = t.value(bv.h_s_hat) == t.value(bv.h_s);
    let (sp, _) = bbfm.attn_p.forward(&mut t, xp, 2);
    let gate = t.value(bv.h_p) == t.value(sp);
    notes.push(format!("film identity exact: {film}, unit gate exact: {gate}"));

    let mut store = ParamStore::default();
    let blk = CrossAttendBlock::new(&mut Builder::new(&mut store, "", 4), "x", D, 1);
    let q = randn(4, 3, D);
    let mut t = Tape::new(&store);
    let (qv, kv) = (t.constant(q.clone()), t.constant(randn(5, 1, D)));
    let (out, _) = blk.forward(&mut t, qv, 3, kv, 1);
    let v = blk.v.forward(&mut t, kv);
    let z = blk.o.forward(&mut t, v);
    let mut expect = t.value(qv) + &t.value(z).row(0);
    for mut r in expect.rows_mut() {
        let m = r.mean().unwrap_or(0.0);
        let var = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / D as f64;
        r.mapv_inplace(|x| (x - m) / (var + LN_EPS).sqrt());
    }
    let single_key = max_abs_diff(t.value(out), &expect);
    notes.push(format!("single key {single_key:.1e}"));

    let mut store = ParamStore::default();
    let sa = SelfAttention::new(&mut Builder::new(&mut store, "", 5), "sa", D, 2);
    let mut t = Tape::new(&store);
    let x = t.constant(randn(6, 8, D));
    let (_, a) = sa.forward(&mut t, x, 4);
    let row_err = t
        .attention_probs(a)
        .expect("attention node")
        .iter()
        .flat_map(|p| p.rows().into_iter().map(|r| (r.sum() - 1.0).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    notes.push(format!("row sums {row_err:.1e}"));

    let cfg = tiny_config();
    let mut store = ParamStore::default();
    let enc = hapfuse_core::encoders::Encoders::new(&mut Builder::new(&mut store, "", 6), &cfg);
    let n = cfg.pipeline.points;
    let cloud = randn(7, 2 * n, 3);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(8, "perm"));
    let mut perm = cloud.clone();
    for (dst, &src) in order.iter().enumerate() {
        perm.row_mut(dst).assign(&cloud.row(src));
    }
    let run_points = |m: &Mat| {
        let mut t = Tape::new(&store);
        let v = t.constant(m.clone());
        let y = enc.points.forward(&mut t, v);
        t.value(y).clone()
    };
    let point_perm = max_abs_diff(&run_points(&cloud), &run_points(&perm));
    notes.push(format!("point permutation {point_perm:.1e}"));

    let kv = randn(9, 5, D);
    let mut kperm = kv.clone();
    for (dst, src) in [(0, 3), (1, 4), (2, 0), (3, 2), (4, 1)] {
        kperm.row_mut(dst).assign(&kv.row(src));
    }
    let mut cstore = ParamStore::default();
    let cblk = CrossAttendBlock::new(&mut Builder::new(&mut cstore, "", 10), "x", D, 1);
    let run = |m: &Mat| {
        let mut t = Tape::new(&cstore);
        let (qv, kv) = (t.constant(q.clone()), t.constant(m.clone()));
        let (o, _) = cblk.forward(&mut t, qv, 3, kv, 5);
        t.value(o).clone()
    };
    let key_perm = max_abs_diff(&run(&kv), &run(&kperm));
    notes.push(format!("key permutation {key_perm:.1e}"));

    check(
        film && gate && single_key < 1e-6 && row_err < 1e-6 && point_perm < 1e-5 && key_perm < 1e-5,
        notes.join(", "),
    )
}

// 3. Diffusion algebra, then memorization of a single demonstration.
fn diffusion() -> Verdict {
    let a0 = randn(20, 4, 6);
    let noise = randn(21, 4, 6);
    let limits = mix(&a0, &noise, 1.0) == a0 && mix(&a0, &noise, 0.0) == noise;
    let sched = NoiseSchedule::cosine(50);
    let x = randn(22, 4, 6);
    let mut mean_err = 0.0f64;
    for k in 1..sched.len() {
        let (ab_t, ab_prev) = (sched.alpha_bar[k], sched.alpha_bar[k - 1]);
        let via_x0 = posterior(&x, &predict_x0(&x, &noise, ab_t), ab_t, ab_prev).0;
        mean_err = mean_err.max(max_abs_diff(&via_x0, &posterior_mean_eps(&x, &noise, ab_t, ab_prev)));
    }
    let forward_ok = forward_diffuse(&a0, 3, &noise, &sched).map(|m| m == mix(&a0, &noise, sched.alpha_bar[3])).unwrap_or(false);

    let t0 = Instant::now();
    let mut cfg = desk_config();
    cfg.train.lr = 2e-3;
    cfg.train.batch = 64;
    cfg.train.grad_clip = 0.3;
    cfg.train.steps = 2000;
    let (episode, _) = expert_episode(&cfg.world, 7);
    let data = TrainSet::new(&[episode], &cfg).map_err(|e| e.to_string())?;
    let (trainer, _) = train_policy(&data, &cfg).map_err(|e| e.to_string())?;
    let policy = &trainer.policy;
    let idx: Vec<usize> = (0..data.len()).collect();
    let (batch, acts) = data.batch(&idx, &policy.norm).map_err(|e| e.to_string())?;
    let draws = 8;
    let mut loss = 0.0;
    for d in 0..draws {
        loss += policy.bc_loss(&batch, &acts, &mut rng::indexed_stream(3, "acceptance.overfit", d)).map_err(|e| e.to_string())?;
    }
    loss /= draws as f64;
    let z = {
        let mut t = Tape::new(&policy.store);
        let (_, fused) = policy.latent(&mut t, &batch);
        t.value(fused.z).clone()
    };
    let sampled = policy.sample_normalized(&z, &mut rng::stream(4, "acceptance.overfit.sample"));
    // Worst action dimension, pooled over samples and horizon steps.
    let width = policy.dims.action;
    let err = &sampled - &acts;
    let rmse = (0..width)
        .map(|d| {
            let cols: Vec<f64> = err.columns().into_iter().skip(d).step_by(width).flatten().copied().collect();
            (cols.iter().map(|v| v * v).sum::<f64>() / cols.len() as f64).sqrt()
        })
        .fold(0.0, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    check(
        limits && forward_ok && mean_err < 1e-10 && loss < 1e-3 && rmse < 0.05 && secs < 180.0,
        format!(
            "mix limits exact: {limits}, reverse mean gap {mean_err:.1e}, memorized loss {loss:.2e}, worst per-dimension sample rmse {rmse:.4}, {secs:.0}s"
        ),
    )
}

// 4. Cabinet score reference values.
fn cabinet() -> Verdict {
    let (a, b, g) = CABINET_WEIGHTS;
    let got: Vec<f64> = [(0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (2.0, 0.0, 5.0)]
        .iter()
        .map(|&(s, d, r)| cabinet_score(s, d, r, a, b, g).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let want = [0.0, 1.0, 2.6];
    let ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() < 1e-12);
    check(ok, format!("{got:?}"))
}

// 5. Mutual information estimator on Gaussians with known information.
fn mutual_information() -> Verdict {
    let t0 = Instant::now();
    let n = 5000;
    let mut r = rng::stream(11, "acceptance.mi");
    let mut draw = || -> f64 { StandardNormal.sample(&mut r) };
    let indep_z: Vec<Vec<f64>> = (0..n).map(|_| vec![draw()]).collect();
    let indep_y: Vec<f64> = (0..n).map(|_| draw()).collect();
    let rho: f64 = 0.9;
    let mut cz = Vec::with_capacity(n);
    let mut cy = Vec::with_capacity(n);
    for _ in 0..n {
        let (u, v) = (draw(), draw());
        cz.push(vec![u]);
        cy.push(rho * u + (1.0 - rho * rho).sqrt() * v);
    }
    let indep = estimate_mi(&indep_z, &indep_y, 3, 8).map_err(|e| e.to_string())?;
    let corr = estimate_mi(&cz, &cy, 3, 8).map_err(|e| e.to_string())?;
    let truth = -0.5 * (1.0 - rho * rho).ln();
    let secs = t0.elapsed().as_secs_f64();
    check(
        indep.abs() < 0.02 && (corr - truth).abs() < 0.05 && secs < 30.0,
        format!("independent {indep:.4}, correlated {corr:.4} vs {truth:.4}, {secs:.1}s"),
    )
}

/// Policies trained on the desk configuration, shared by criteria 6 to 9.
struct Desk {
    cfg: RunConfig,
    rows: Vec<(FusionMode, Policy, EvalReport, f64)>,
}

impl Desk {
    fn build() -> Result<Desk, String> {
        let cfg = desk_config();
        let episodes = generate_episodes(&cfg.world, 50, 0).map_err(|e| e.to_string())?;
        let modes = [
            FusionMode::Hierarchical,
            FusionMode::ConcatPs,
            FusionMode::ImmOnly,
            FusionMode::BbfmOnly,
            FusionMode::ConcatAps,
        ];
        let mut rows = Vec::new();
        for mode in modes {
            let t0 = Instant::now();
            let mut row = ablation_suite(&episodes, &cfg, &[mode]).map_err(|e| e.to_string())?;
            let r = row.pop().ok_or("empty ablation")?;
            rows.push((mode, r.trainer.policy, r.report, t0.elapsed().as_secs_f64()));
        }
        Ok(Desk { cfg, rows })
    }

    fn get(&self, mode: FusionMode) -> &(FusionMode, Policy, EvalReport, f64) {
        self.rows.iter().find(|r| r.0 == mode).expect("mode trained")
    }

    fn mean(&self, mode: FusionMode) -> f64 {
        self.get(mode).2.mean
    }

    fn summary(&self) -> String {
        self.rows
            .iter()
            .map(|(m, _, r, s)| format!("{m} {:.4}±{:.4} ({:.0}s)", r.mean, r.std, s))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

// 6. Hierarchical fusion beats point-proprio concatenation by 20%.
fn beats_concat(desk: &Desk) -> Verdict {
    let (h, c) = (desk.mean(FusionMode::Hierarchical), desk.mean(FusionMode::ConcatPs));
    let slowest = desk.rows.iter().map(|r| r.3).fold(0.0, f64::max);
    check(h < 0.8 * c && slowest < 1800.0, desk.summary())
}

// 7. Both fusion stages together beat either alone.
fn beats_single_stage(desk: &Desk) -> Verdict {
    let h = desk.mean(FusionMode::Hierarchical);
    let (i, b) = (desk.mean(FusionMode::ImmOnly), desk.mean(FusionMode::BbfmOnly));
    check(h < i.min(b), format!("hierarchical {h:.4}, imm_only {i:.4}, bbfm_only {b:.4}"))
}

// 8. Hierarchical latents carry more information about the outcome.
fn latent_information(desk: &Desk) -> Verdict {
    let seeds: Vec<u64> = (0..desk.cfg.mi.rollouts as u64).map(|i| desk.cfg.eval.seed + i).collect();
    let policies = [
        ("hierarchical", &desk.get(FusionMode::Hierarchical).1),
        ("concat_ps", &desk.get(FusionMode::ConcatPs).1),
    ];
    let rows = mi_suite(&policies, &desk.cfg.world, &seeds, desk.cfg.mi.k, desk.cfg.mi.d_reduce).map_err(|e| e.to_string())?;
    let mi: Vec<f64> = rows
        .iter()
        .map(|r| r.result.as_ref().map(|m| m.mi).map_err(|e| format!("{}: {e}", r.method)))
        .collect::<Result<_, _>>()?;
    check(mi[0] > mi[1], format!("hierarchical {:.4} nats, concat_ps {:.4} nats", mi[0], mi[1]))
}

// 9. Every method degrades on the shifted container, hierarchical no more
// than concatenating all three modalities.
fn generalization(desk: &Desk) -> Verdict {
    let seeds = desk.cfg.eval.seed_list();
    let mut deg = Vec::new();
    for (mode, policy, _, _) in &desk.rows {
        let rows = generalization_suite(policy, &desk.cfg.world, &[4], &seeds).map_err(|e| e.to_string())?;
        deg.push((*mode, rows[0].degradation));
    }
    let of = |m: FusionMode| deg.iter().find(|d| d.0 == m).map(|d| d.1).unwrap_or(f64::NAN);
    let all_positive = deg.iter().all(|d| d.1 > 0.0);
    check(
        all_positive && of(FusionMode::Hierarchical) <= of(FusionMode::ConcatAps),
        deg.iter().map(|(m, d)| format!("{m} {d:+.4}")).collect::<Vec<_>>().join(", "),
    )
}

// 10. Datasets, training and evaluation reproduce bit for bit.
fn determinism() -> Verdict {
    let mut cfg = tiny_config();
    cfg.eval.trials = 3;
    let episodes = generate_episodes(&cfg.world, 2, 5).map_err(|e| e.to_string())?;
    let again = generate_episodes(&cfg.world, 2, 5).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (da, db) = (dir.path().join("a"), dir.path().join("b"));
    dataset::write_dataset(&da, &episodes).map_err(|e| e.to_string())?;
    dataset::write_dataset(&db, &again).map_err(|e| e.to_string())?;
    let digests = dataset::directory_digest(&da).map_err(|e| e.to_string())? == dataset::directory_digest(&db).map_err(|e| e.to_string())?;
    let loaded = dataset::read_dataset(&da).map_err(|e| e.to_string())?;
    let roundtrip = loaded == episodes;

    let data = TrainSet::new(&loaded, &cfg).map_err(|e| e.to_string())?;
    let (ta, _) = train_policy(&data, &cfg).map_err(|e| e.to_string())?;
    let (tb, _) = train_policy(&data, &cfg).map_err(|e| e.to_string())?;
    let (ba, bb) = (checkpoint::encode(&ta).map_err(|e| e.to_string())?, checkpoint::encode(&tb).map_err(|e| e.to_string())?);
    let decoded = checkpoint::decode(&ba, Path::new("memory")).map_err(|e| e.to_string())?;
    let reencoded = checkpoint::encode(&decoded).map_err(|e| e.to_string())? == ba;

    let seeds = cfg.eval.seed_list();
    let ea = run_eval(&ta.policy, &cfg.world, &seeds).map_err(|e| e.to_string())?;
    let eb = run_eval(&decoded.policy, &cfg.world, &seeds).map_err(|e| e.to_string())?;
    check(
        digests && roundtrip && ba == bb && reencoded && ea == eb,
        format!(
            "dataset digests equal: {digests}, reload exact: {roundtrip}, checkpoints equal: {}, re-encode exact: {reencoded}, evals equal: {}",
            ba == bb,
            ea == eb
        ),
    )
}

fn dominant_frequency(block: &[f64], sample_rate: f64, pad: usize) -> f64 {
    let n = block.len() * pad;
    let mut buf: Vec<Complex<f64>> = block.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let peak = (1..n / 2).max_by(|&a, &b| buf[a].norm_sqr().total_cmp(&buf[b].norm_sqr())).unwrap_or(0);
    peak as f64 * sample_rate / n as f64
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

// 11. Vision cannot see the fill, audio tracks it, and a clean latch
// scores zero.
fn world_checks() -> Verdict {
    let mut cfg = RunConfig::default().world;
    cfg.snr_db = f64::INFINITY;

    let base = pour::initial_state(&mut rng::stream(1, "acceptance.blind"), &cfg);
    let mut fuller = base.clone();
    fuller.fill_level = 0.8;
    let render = |s: pour::PourState| World::with_state(&cfg, 9, WorldState::Pour(s)).render();
    let blind = render(base) == render(fuller);

    let (mut fills, mut freqs) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let (ep, _) = expert_episode(&cfg, seed);
        for i in 1..ep.len() {
            let (WorldState::Pour(prev), WorldState::Pour(cur)) = (ep.hidden_state(i - 1), ep.hidden_state(i)) else {
                return Err("pour episode recorded a non-pour state".into());
            };
            if cur.fill_level > prev.fill_level {
                let block: Vec<f64> = ep.waveform.row(i).iter().map(|&v| v as f64).collect();
                fills.push(cur.fill_level);
                freqs.push(dominant_frequency(&block, cfg.sample_rate as f64, 16));
            }
        }
    }
    let r = pearson(&fills, &freqs);

    let mut latch_cfg = cfg.clone();
    latch_cfg.task = hapfuse_core::TaskId::Latch;
    let (ep, _) = expert_episode(&latch_cfg, 3);
    let WorldState::Latch(end) = ep.final_state() else {
        return Err("latch episode recorded a non-latch state".into());
    };
    let latch = latch_score_of(&end);
    check(
        blind && fills.len() > 10 && r > 0.99 && latch == 0.0,
        format!("renders identical across fill: {blind}, fill/frequency correlation {r:.4} over {} steps, clean latch score {latch}", fills.len()),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut failures = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        if !selected(n) {
            return;
        }
        let t0 = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name} [{secs:.1}s]: {detail}");
            }
        }
    };

    let tiny = tiny_config();
    report(1, "gradients match finite differences", &mut || {
        let episodes = generate_episodes(&tiny.world, 2, 11).map_err(|e| e.to_string())?;
        gradients(&episodes)
    });
    report(2, "fusion structural identities", &mut structure);
    report(3, "diffusion algebra and memorization", &mut diffusion);
    report(4, "cabinet score reference values", &mut cabinet);
    report(5, "mutual information estimator", &mut mutual_information);

    let desk = if (6..=9).any(selected) {
        let t0 = Instant::now();
        let d = catch_unwind(Desk::build).unwrap_or_else(|_| Err("training panicked".into()));
        println!("trained desk policies in {:.0}s", t0.elapsed().as_secs_f64());
        Some(d)
    } else {
        None
    };
    let with_desk = |f: fn(&Desk) -> Verdict| {
        let desk = &desk;
        move || match desk {
            Some(Ok(d)) => f(d),
            Some(Err(e)) => Err(e.clone()),
            None => Err("desk policies not trained".into()),
        }
    };
    report(6, "hierarchical beats concat_ps by 20%", &mut with_desk(beats_concat));
    report(7, "hierarchical beats imm_only and bbfm_only", &mut with_desk(beats_single_stage));
    report(8, "hierarchical latents more informative than concat_ps", &mut with_desk(latent_information));
    report(9, "container shift degradation", &mut with_desk(generalization));
    report(10, "determinism and persistence", &mut determinism);
    report(11, "sensor and metric checks", &mut world_checks);

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}

//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the heavier convergence runs execute once, in order.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::attn::{close, loop_attn, random_matrix};
use common::fd::{check_loss_gradients, check_scene_gradients, FdStats};
use common::score::{pred, random_image, role_oracle};
use common::{oracle_render, random_scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splatkin_core::guidance::*;
use splatkin_core::pipeline::*;
use splatkin_core::recon::{optimize_stage2, ReconConfig};
use splatkin_core::schedule::*;
use splatkin_core::splat::{read_ply, render, DensifyMode, RenderOptions};
use splatkin_core::vcr::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn renderer_matches_oracle() -> Outcome {
    let start = Instant::now();
    let opts = RenderOptions::default();
    let mut worst: f64 = 0.0;
    for seed in 0..200 {
        let s = random_scene(seed, 64, 32, 0.99);
        let out = render(&s.cloud, &s.camera, s.background, &opts).unwrap();
        let (color, alpha) = oracle_render(&s.cloud, &s.camera, s.background, opts.blur);
        worst = worst.max(out.color.max_abs_diff(&color)).max(out.alpha.max_abs_diff(&alpha));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(worst <= 1e-6, "max deviation {worst:e}");
    ensure!(secs < 30.0, "took {secs:.1} s");
    Ok(format!("200 scenes, max deviation {worst:.1e}, {secs:.1} s"))
}

fn gradients_match_differences() -> Outcome {
    let mut splats = FdStats::default();
    let mut loss = FdStats::default();
    for seed in 0..60 {
        check_scene_gradients(seed, &mut splats);
    }
    for seed in 0..50 {
        check_loss_gradients(seed, &mut loss);
    }
    for (name, s) in [("splat", &splats), ("loss", &loss)] {
        ensure!(s.failures.is_empty(), "{name}: {} of {} failed, first {}", s.failures.len(), s.checked, s.failures[0]);
    }
    Ok(format!("{} splat and {} loss components over 60 and 50 scenes", splats.checked, loss.checked))
}

fn schedule_fit() -> Outcome {
    let table = PhaseTable::default();
    let fit = fit_schedule(&table, &SearchGrid::default()).unwrap();
    let target = [0.375, 0.2083, 0.4167];
    for k in 0..3 {
        ensure!((fit.range_mass[k] - target[k]).abs() <= 0.02, "mass {:?}", fit.range_mass);
    }
    let p = &fit.params;
    ensure!(
        (common::sched::oracle_objective(p.s1, p.s2, p.mode) - fit.objective).abs() < 1e-12,
        "objective disagrees with plain-loop evaluation"
    );
    let best = common::sched::fine_grid_best();
    ensure!(fit.objective <= best + 1e-6, "objective {:e} above fine grid {best:e}", fit.objective);

    let curve = t_curve(p, &table, 0);
    ensure!(curve == common::sched::oracle_curve(p, 2400), "curve differs from tail-sum scan");
    ensure!(curve.windows(2).all(|w| w[0] >= w[1]), "curve increases");
    let occ = range_occupancy(&curve, &table);
    for k in 0..3 {
        ensure!((occ[k] as f64 - table.budgets[k] as f64).abs() <= 0.03 * 2400.0, "occupancy {occ:?}");
    }
    ensure!(occ[1] < occ[0] && occ[1] < occ[2], "middle phase is not the shortest: {occ:?}");
    Ok(format!(
        "mass ({:.4}, {:.4}, {:.4}), objective {:.2e} vs grid {best:.2e}, occupancy {occ:?}",
        fit.range_mass[0], fit.range_mass[1], fit.range_mass[2], fit.objective
    ))
}

fn score_identities() -> Outcome {
    let tol = 1e-5;
    let mut cases = 0;
    for seed in 0..100u64 {
        let (o, c) = role_oracle(seed);
        let t = 1 + (seed as u32 * 97) % 1000;
        let eps = random_image(seed + 7, -2.0, 2.0);
        let x_t = add_noise(o.noise(), &random_image(seed + 9, 0.0, 1.0), t, &eps).unwrap();
        let minus = |a: &splatkin_core::Image, b: &splatkin_core::Image| a.zip_map(b, |x, y| x - y).unwrap();
        let e = |cond: &Condition| pred(&o, &x_t, t, cond);

        let d0 = sds_difference(&o, &x_t, t, &c.sds_conditional, &c.sds_null, &eps, 0.0).unwrap();
        ensure!(d0.max_abs_diff(&minus(&e(&c.sds_null), &eps)) < tol, "SDS at zero guidance, seed {seed}");

        let rect = e(&c.rectifier);
        let before = hds_difference(&o, &x_t, t, &c, 0.0, t + 1).unwrap();
        let after = hds_difference(&o, &x_t, t, &c, 0.0, t).unwrap();
        ensure!(before.max_abs_diff(&rect) < tol, "HDS at zero guidance below the switch, seed {seed}");
        ensure!(after.max_abs_diff(&minus(&rect, &e(&c.negative))) < tol, "HDS at zero guidance past the switch, seed {seed}");

        let g = 7.5;
        let diff = minus(
            &hds_difference(&o, &x_t, t, &c, g, t + 1).unwrap(),
            &hds_difference(&o, &x_t, t, &c, g, t).unwrap(),
        );
        ensure!(diff.max_abs_diff(&e(&c.negative)) < tol, "switch difference is not the negative term, seed {seed}");

        let tau = 1 + (seed as u32 * 31) % 1000;
        let h = |g: f64| hds_difference(&o, &x_t, t, &c, g, tau).unwrap();
        let (h0, h1, h3) = (h(0.0), h(1.0), h(3.0));
        let step = minus(&e(&c.conditional), &rect);
        ensure!(minus(&h1, &h0).max_abs_diff(&step) < tol, "unit guidance step, seed {seed}");
        let collinear = h3.zip_map(&h1, |a, b| a - 3.0 * b).unwrap().zip_map(&h0, |a, b| a + 2.0 * b).unwrap();
        ensure!(collinear.data().iter().all(|v| v.abs() < tol), "not affine in guidance, seed {seed}");

        let target = o.target(&c.conditional).unwrap().clone();
        let clean = add_noise(o.noise(), &target, t, &eps).unwrap();
        ensure!(pred(&o, &clean, t, &c.conditional).max_abs_diff(&eps) < tol, "oracle residual at t={t}");
        let x = add_noise(o.noise(), o.target(&c.sds_conditional).unwrap(), t, &eps).unwrap();
        let sds = sds_difference(&o, &x, t, &c.sds_conditional, &c.sds_null, &eps, 1.0).unwrap();
        ensure!(sds.data().iter().all(|v| v.abs() < tol), "SDS residual at t={t}");
        cases += 1;
    }
    Ok(format!("{cases} random oracles, all identities within {tol:e}"))
}

fn distillation_converges() -> Outcome {
    use common::distill::{fixture, psnr, run};
    let start = Instant::now();
    let f = fixture(2000, 64, 1);
    let (_, hds) = run(&f, DistillMode::Hds, 300, 7, 300);
    let (_, ahds) = run(&f, DistillMode::Ahds, 300, 7, 300);
    let (_, short) = run(&f, DistillMode::Ahds, 210, 7, 210);
    let secs = start.elapsed().as_secs_f64();
    let (from, to) = (psnr(ahds[0].1), psnr(ahds.last().unwrap().1));
    let (hds_final, short_final) = (hds.last().unwrap().1, short.last().unwrap().1);
    ensure!(to - from >= 10.0, "gain {:.2} dB ({from:.2} -> {to:.2})", to - from);
    ensure!(
        short_final <= hds_final,
        "210 adaptive steps reach {:.2} dB, 300 fixed-range steps {:.2} dB",
        psnr(short_final),
        psnr(hds_final)
    );
    ensure!(secs < 300.0, "took {secs:.0} s");
    Ok(format!(
        "AHDS {from:.2} -> {to:.2} dB; AHDS at 210 steps {:.2} dB vs HDS at 300 {:.2} dB; {secs:.0} s",
        psnr(short_final),
        psnr(hds_final)
    ))
}

fn vcr_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in 1..12 {
        for scale in [0.1, 3.0, 200.0] {
            let w = softmax_rows(&random_matrix(&mut rng, n, 13 - n, scale));
            ensure!(w.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-6), "softmax rows at scale {scale}");
        }
        let (q, k, v) = (random_matrix(&mut rng, n, 8, 3.0), random_matrix(&mut rng, n, 8, 3.0), random_matrix(&mut rng, n, 8, 3.0));
        let own = attn(&q, &k, &v).unwrap();
        ensure!(close(&own, &loop_attn(&q, &k, &v), 1e-6), "attention vs loop oracle");
        ensure!(close(&mutual_attention(&q, &k, &v, &k, &v).unwrap(), &own, 1e-6), "duplication identity");
    }

    let m: Vec<Matrix> = (0..7).map(|_| random_matrix(&mut rng, 8, 16, 2.0)).collect();
    let fuse = |eta_left: f64, lambda_self: f64| {
        let w = FusionWeights { eta_left, eta_right: 1.0 - eta_left, lambda_self };
        fused_attention(&m[0], &m[1], &m[2], &m[3], &m[4], &m[5], &m[6], w).unwrap()
    };
    let (own, l, r) = (attn(&m[0], &m[1], &m[2]).unwrap(), attn(&m[0], &m[3], &m[4]).unwrap(), attn(&m[0], &m[5], &m[6]).unwrap());
    ensure!(fuse(0.3, 1.0) == own, "fusion with full self weight");
    ensure!(fuse(1.0, 0.0) == l && fuse(0.0, 0.0) == r, "fusion with zero self weight");
    ensure!(close(&fuse(0.3, 0.0), &(&l * 0.3 + &r * 0.7), 1e-12), "neighbour blend with zero self weight");

    let ring = ViewRing::default();
    let mut checked = 0;
    for i in 0..ring.len() {
        if let Guidance::Intermediate { eta_left, eta_right, .. } = ring.guidance(i).unwrap() {
            ensure!((eta_left + eta_right - 1.0).abs() < 1e-12, "ring view {i}");
            checked += 1;
        }
    }
    for (phi, a, b) in [(0.0, 350.0, 10.0), (355.0, 350.0, 10.0), (5.0, 300.0, 30.0)] {
        let (el, er) = relative_distance(phi, a, b);
        ensure!((el + er - 1.0).abs() < 1e-12 && (0.0..=1.0).contains(&el), "wraparound at {phi}");
    }

    let (ring, _, views) = common::ring::inconsistent_views(11, 600, 64);
    let den = ToyDenoiser::new(64, 64, 11, NoiseSchedule::default()).unwrap();
    let cfg = VcrConfig::default().disabled();
    let a = refine_ring(&views, &ring, &den, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = denoise_independent(&views, &ring, &den, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    ensure!(a.iter().zip(&b).all(|(x, y)| x.data() == y.data()), "disabled refinement differs from independent denoising");
    Ok(format!("attention identities, fusion limits, {checked} intermediate views plus wraparound, disabled ring bit-exact"))
}

fn vcr_consistency() -> Outcome {
    let mut wins = 0;
    let mut ratios = Vec::new();
    for seed in 0..10 {
        let (ring, _, views) = common::ring::inconsistent_views(seed, 600, 64);
        let den = ToyDenoiser::new(64, 64, seed, NoiseSchedule::default()).unwrap();
        let cfg = VcrConfig::default();
        let on = refine_ring(&views, &ring, &den, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let off = denoise_independent(&views, &ring, &den, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (c_on, c_off) = (consistency(&on, &ring, &den).unwrap(), consistency(&off, &ring, &den).unwrap());
        if c_on < c_off {
            wins += 1;
        }
        ratios.push(c_on / c_off);
    }
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    ensure!(wins >= 9, "{wins}/10 trials lower with refinement");
    Ok(format!("{wins}/10 trials lower with refinement, worst on/off ratio {worst:.3}"))
}

fn stage2_converges() -> Outcome {
    use common::recon::{avatar, recolored_run, targets_of};
    let (initial, last, log) = recolored_run(&avatar(4, 300, 32));
    ensure!(log.len() == 800, "{} steps logged", log.len());
    ensure!(log.iter().all(|l| l.loss.is_finite()), "non-finite loss");
    ensure!(last <= 0.2 * initial, "final {last:.4e} vs initial {initial:.4e}");

    let s = avatar(3, 400, 32);
    let cfg = ReconConfig::default();
    let views = targets_of(&s.cloud, &s.cameras, &cfg);
    let mut cloud = s.cloud.clone();
    let fixed = optimize_stage2(&mut cloud, &views, &cfg, &RenderOptions::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let peak = fixed.iter().map(|l| l.loss).fold(0.0, f64::max);
    ensure!(peak < 1e-3, "fixed point drifted to {peak:e}");
    Ok(format!("loss ratio {:.3} after 800 steps; fixed point peak {peak:.1e} over {} steps", last / initial, fixed.len()))
}

fn files_under(root: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out
}

fn orchestration() -> Outcome {
    let mut cfg = RunConfig::smoke();
    cfg.framing.size = 32;
    cfg.oracle.reference_gaussians = 300;
    cfg.oracle.views = 8;
    cfg.stage1.gaussians = 150;
    cfg.stage1.steps = REFERENCE_STAGE1_STEPS;
    cfg.stage1.densify = DensifySchedule::default();
    let pool = build_pool(&cfg).unwrap();
    let out = run_stage1(&cfg, &pool, None).unwrap();
    let fired: Vec<(u32, DensifyMode)> = out.events.iter().map(|e| (e.step, e.mode)).collect();
    let expect = vec![(200, DensifyMode::Both), (1000, DensifyMode::Both), (1800, DensifyMode::PruneOnly)];
    ensure!(fired == expect, "maintenance ran at {fired:?}");
    ensure!(out.log.len() == 2400, "{} steps logged", out.log.len());

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut manifests = Vec::new();
    let mut secs = Vec::new();
    for (k, dir) in dirs.iter().enumerate() {
        let mut cfg = RunConfig::smoke();
        cfg.output = dir.path().to_path_buf();
        let threads = rayon::ThreadPoolBuilder::new().num_threads(1 + 3 * k).build().unwrap();
        let start = Instant::now();
        manifests.push(threads.install(|| run_pipeline(&cfg)).unwrap());
        secs.push(start.elapsed().as_secs_f64());
        ensure!(secs[k] < 300.0, "smoke run took {:.0} s", secs[k]);
    }
    let root = dirs[0].path();
    let m = &manifests[0];
    let listed: BTreeSet<String> = m.outputs.iter().map(|a| a.path.clone()).collect();
    let mut on_disk = files_under(root);
    ensure!(on_disk.remove(RUN_MANIFEST), "no run manifest");
    ensure!(listed == on_disk, "manifest lists {listed:?}, disk has {on_disk:?}");
    ensure!(RunManifest::read_json(root.join(RUN_MANIFEST)).unwrap() == *m, "manifest on disk differs");
    ensure!(read_ply(root.join(FINAL_PLY)).is_ok(), "final cloud unreadable");
    let steps: Vec<u32> = m.stage1.densify.iter().map(|e| e.step).collect();
    ensure!(steps == vec![25, 125, 225], "smoke maintenance at {steps:?}");

    let hashes = |m: &RunManifest| -> Vec<(String, String)> {
        m.outputs.iter().filter(|a| a.path != "config.json").map(|a| (a.path.clone(), a.sha256.clone())).collect()
    };
    ensure!(hashes(&manifests[0]) == hashes(&manifests[1]), "artifact hashes differ between thread counts");
    for f in [STAGE1_PLY, FINAL_PLY] {
        let a = std::fs::read(root.join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        ensure!(a == b, "{f} differs between runs");
    }
    Ok(format!(
        "maintenance at 200/1000/1800, smoke runs {:.0} s and {:.0} s, {} artifacts byte-identical",
        secs[0],
        secs[1],
        m.outputs.len()
    ))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("renderer matches brute-force compositing", renderer_matches_oracle),
        ("gradients match central differences", gradients_match_differences),
        ("schedule fit", schedule_fit),
        ("score combinator identities", score_identities),
        ("distillation convergence", distillation_converges),
        ("attention and ring identities", vcr_identities),
        ("refinement consistency", vcr_consistency),
        ("stage-two convergence", stage2_converges),
        ("orchestration", orchestration),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let mut out = std::io::stdout().lock();
        writeln!(out, "criterion {}: {status} {name}: {detail} [{:.1} s]", k + 1, start.elapsed().as_secs_f64()).unwrap();
        out.flush().unwrap();
    }
    if failed > 0 {
        eprintln!("{failed} of {} criteria failed", checks.len());
        std::process::exit(1);
    }
}

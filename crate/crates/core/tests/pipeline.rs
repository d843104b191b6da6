use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splatkin_core::guidance::{DistillMode, Prompts, ViewConditions};
use splatkin_core::pipeline::*;
use splatkin_core::splat::{init_from_surface, read_ply, CapsuleHumanoid, SurfaceSource};
use splatkin_core::Error;

fn tiny(steps: u32) -> RunConfig {
    let mut cfg = RunConfig::smoke();
    cfg.framing.size = 32;
    cfg.oracle.reference_gaussians = 300;
    cfg.oracle.views = 8;
    cfg.stage1.gaussians = 150;
    cfg.stage1.steps = steps;
    cfg.stage2.recon.steps = 5;
    cfg
}

#[test]
fn reference_densify_schedule() {
    let d = DensifySchedule::default();
    assert_eq!(d.densify_steps(REFERENCE_STAGE1_STEPS), vec![200, 1000]);
    assert_eq!(d.prune_step(REFERENCE_STAGE1_STEPS), Some(1800));
    // Interval 800 from 200 bounded by 1700, written out.
    let expect: Vec<u32> = (200..=1700).filter(|s| (s - 200) % 800 == 0).collect();
    assert_eq!(d.densify_steps(REFERENCE_STAGE1_STEPS), expect);
    let s = d.scaled(REFERENCE_STAGE1_STEPS, 300);
    assert_eq!(s.densify_steps(300), vec![25, 125]);
    assert_eq!(s.prune_step(300), Some(225));
}

#[test]
fn count_changes_only_at_densify_steps() {
    let mut cfg = tiny(120);
    // Every timestep carries signal in this mode, so positional statistics build up.
    cfg.guidance.mode = DistillMode::Sds;
    cfg.guidance.t_range = [20, 500];
    cfg.stage1.densify = DensifySchedule {
        start: 40,
        interval: 40,
        stop: 80,
        prune_only: Some(100),
    };
    cfg.stage1.densify_rules.grad_threshold = 1e-5;
    let pool = build_pool(&cfg).unwrap();
    let out = run_stage1(&cfg, &pool, None).unwrap();
    let steps: BTreeSet<u32> = out.events.iter().map(|e| e.step).collect();
    assert_eq!(steps, BTreeSet::from([40, 80, 100]));
    let mut prev = out.init.len();
    let mut changed = 0;
    for row in &out.log {
        if row.gaussians != prev {
            assert!(steps.contains(&row.step), "count changed at step {}", row.step);
            changed += 1;
        }
        prev = row.gaussians;
    }
    assert!(changed > 0, "densification never changed the cloud");
    assert_eq!(prev, out.cloud.len());
}

#[test]
fn zero_steps_return_initialization() {
    let cfg = tiny(0);
    let pool = build_pool(&cfg).unwrap();
    let out = run_stage1(&cfg, &pool, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.init);
    let init = init_from_surface(&SurfaceSource::Humanoid(CapsuleHumanoid::default()), 150, &mut rng).unwrap();
    assert_eq!(out.cloud.gaussians(), init.gaussians());
    assert!(out.log.is_empty() && out.events.is_empty());
}

#[test]
fn failed_step_leaves_loadable_checkpoint() {
    let cfg = tiny(10);
    let mut pool = build_pool(&cfg).unwrap();
    let unknown = Prompts {
        text: "nobody registered this".into(),
        ..Prompts::default()
    };
    pool.conds = pool.cameras.iter().map(|_| ViewConditions::from_prompts(&unknown, None)).collect();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join(STAGE1_PLY);
    let r = run_stage1(&cfg, &pool, Some(&ckpt));
    assert!(matches!(r, Err(Error::UnknownCondition(_))));
    let saved = read_ply(&ckpt).unwrap();
    let fresh = dir.path().join("init.ply");
    let ok = run_stage1(&tiny(0), &pool, None).unwrap();
    splatkin_core::splat::write_ply(&ok.cloud, &fresh).unwrap();
    assert_eq!(saved.gaussians(), read_ply(&fresh).unwrap().gaussians());
}

#[test]
fn disabled_refinement_starts_at_fixed_point() {
    let mut cfg = tiny(0);
    cfg.stage2.vcr_enabled = false;
    cfg.stage2.recon.steps = 3;
    let pool = build_pool(&cfg).unwrap();
    let s1 = run_stage1(&cfg, &pool, None).unwrap();
    let s2 = run_stage2(&cfg, s1.cloud).unwrap();
    assert_eq!(s2.before, s2.after);
    assert!(s2.consistency.is_none());
    assert!(s2.log[0].loss < 1e-12, "initial loss {}", s2.log[0].loss);
}

#[test]
fn config_hash_tracks_config() {
    let a = RunConfig::smoke();
    assert_eq!(a.digest().unwrap(), a.clone().digest().unwrap());
    let mut b = a.clone();
    b.seeds.stage2 += 1;
    assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    let mut c = a.clone();
    c.stage2.recon.lambda_perc = 14.0;
    assert_ne!(a.digest().unwrap(), c.digest().unwrap());
    let back: RunConfig = serde_json::from_str(&a.to_json().unwrap()).unwrap();
    assert_eq!(a.digest().unwrap(), back.digest().unwrap());
}


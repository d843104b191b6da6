//! Scene generators and slow reference implementations shared by the
//! integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatkin_core::splat::{Camera, Gaussian3D, GaussianCloud};
use splatkin_core::Image;

pub struct Scene {
    pub cloud: GaussianCloud,
    pub camera: Camera,
    pub background: [f64; 3],
}

/// Random splats in front of a random orbit camera, mostly on screen.
pub fn random_scene(seed: u64, max_gaussians: usize, max_size: usize, max_opacity: f64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_gaussians);
    let size = rng.random_range(8..=max_size);
    let camera = if rng.random_bool(0.75) {
        Camera::perspective(rng.random_range(0.0..360.0), rng.random_range(-30.0..30.0), 3.0, size, size as f64 * 1.2)
    } else {
        Camera::orthographic(rng.random_range(0.0..360.0), rng.random_range(-30.0..30.0), 3.0, size, size as f64 / 2.2)
    };
    let gaussians = (0..n)
        .map(|_| {
            let center = Vector3::new(
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
            );
            let scale = Vector3::new(
                rng.random_range(0.03..0.25),
                rng.random_range(0.03..0.25),
                rng.random_range(0.03..0.25),
            );
            let q = Vector4::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) + Vector4::new(0.2, 0.0, 0.0, 0.0);
            let color = Vector3::new(rng.random(), rng.random(), rng.random());
            Gaussian3D::new(center, scale, rng.random_range(0.05..max_opacity), color).with_rotation(q)
        })
        .collect();
    let background = [rng.random(), rng.random(), rng.random()];
    Scene {
        cloud: GaussianCloud::new(gaussians).unwrap(),
        camera,
        background,
    }
}

fn quat_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let q = q / q.norm();
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Image-plane mean, 2D covariance and depth, built directly from the camera
/// pose. `None` when the center is behind the near plane.
pub fn oracle_project(g: &Gaussian3D, cam: &Camera, blur: f64) -> Option<(Vector2<f64>, Matrix2<f64>, f64)> {
    let eye = cam.position();
    let fwd = (cam.target() - eye).normalize();
    let right = fwd.cross(&Vector3::y()).normalize();
    let down = fwd.cross(&right);
    let d = g.center - eye;
    let p = Vector3::new(right.dot(&d), down.dot(&d), fwd.dot(&d));
    if p.z <= 0.01 {
        return None;
    }
    let r = quat_matrix(&g.rotation);
    let s = Matrix3::from_diagonal(&g.log_scale.map(f64::exp));
    let sigma = r * s * s * r.transpose();
    let w = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
    let cam_sigma = w * sigma * w.transpose();
    let (cx, cy) = (cam.width as f64 / 2.0, cam.height as f64 / 2.0);
    let (mean, j) = match cam.projection {
        splatkin_core::splat::Projection::Perspective { focal } => (
            Vector2::new(focal * p.x / p.z + cx, focal * p.y / p.z + cy),
            nalgebra::Matrix2x3::new(
                focal / p.z,
                0.0,
                -focal * p.x / (p.z * p.z),
                0.0,
                focal / p.z,
                -focal * p.y / (p.z * p.z),
            ),
        ),
        splatkin_core::splat::Projection::Orthographic { pixels_per_unit: k } => (
            Vector2::new(k * p.x + cx, k * p.y + cy),
            nalgebra::Matrix2x3::new(k, 0.0, 0.0, 0.0, k, 0.0),
        ),
    };
    let cov = j * cam_sigma * j.transpose() + Matrix2::identity() * blur;
    Some((mean, cov, p.z))
}

/// Per-pixel front-to-back compositing over every splat: no tiles, no cutoff,
/// no early termination.
pub fn oracle_render(cloud: &GaussianCloud, cam: &Camera, bg: [f64; 3], blur: f64) -> (Image, Image) {
    let mut items: Vec<(f64, Vector2<f64>, Matrix2<f64>, f64, Vector3<f64>)> = cloud
        .gaussians()
        .iter()
        .filter_map(|g| {
            oracle_project(g, cam, blur).map(|(m, c, z)| {
                let op = 1.0 / (1.0 + (-g.opacity_logit).exp());
                (z, m, c.try_inverse().unwrap(), op, g.color)
            })
        })
        .collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut color = Image::new(cam.width, cam.height, 3);
    let mut alpha = Image::new(cam.width, cam.height, 1);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = Vector3::zeros();
            for (_, m, inv, op, col) in &items {
                let d = px - m;
                let a = op * (-0.5 * (d.transpose() * inv * d)[0]).exp();
                c += col * (a * t);
                t *= 1.0 - a;
            }
            for k in 0..3 {
                color.set(x, y, k, c[k] + t * bg[k]);
            }
            alpha.set(x, y, 0, 1.0 - t);
        }
    }
    (color, alpha)
}

/// `Σ upstream · color` for a cloud, the scalar used for gradient checks.
pub fn weighted_sum(img: &Image, upstream: &Image) -> f64 {
    img.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
}

pub fn random_upstream(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let data = (0..w * h * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    Image::from_vec(w, h, 3, data).unwrap()
}

/// Central difference `(f(x+h) − f(x−h)) / 2h` of a scalar function of one
/// raw parameter, applied via `set`.
pub fn central_difference<F, S>(mut f: F, mut set: S, x0: f64, h: f64) -> f64
where
    F: FnMut() -> f64,
    S: FnMut(f64),
{
    set(x0 + h);
    let up = f();
    set(x0 - h);
    let down = f();
    set(x0);
    (up - down) / (2.0 * h)
}

/// Relative agreement with a small absolute floor for components near zero.
pub fn grad_close(analytic: f64, numeric: f64, floor: f64) -> bool {
    (analytic - numeric).abs() <= 1e-3 * analytic.abs().max(numeric.abs()) + floor
}

pub mod distill {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use splatkin_core::guidance::*;
    use splatkin_core::pipeline::{build_oracle, reference_avatar, Framing};
    use splatkin_core::posecond::TrimRules;
    use splatkin_core::recon::{AdamHyper, CloudOptimizer, LearningRates};
    use splatkin_core::schedule::{PhaseTable, SearchGrid};
    use splatkin_core::splat::*;

    pub struct Fixture {
        pub framing: Framing,
        pub cameras: Vec<Camera>,
        pub conds: Vec<ViewConditions>,
        pub oracle: MockOracle,
        pub targets: Vec<splatkin_core::Image>,
        pub init: GaussianCloud,
        pub background: [f64; 3],
    }

    /// Reference avatar rendered from 8 azimuths; the cloud to optimize starts
    /// from a different surface sample.
    pub fn fixture(count: usize, size: usize, seed: u64) -> Fixture {
        let body = CapsuleHumanoid::default();
        let framing = Framing { size, ..Framing::default() };
        let cameras = framing.orbit(8, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = reference_avatar(&body, count, 0.85, &mut rng).unwrap();
        let background = [1.0; 3];
        let opts = RenderOptions::default();
        let (oracle, conds, banks) = build_oracle(
            &reference,
            &cameras,
            &Prompts::default(),
            Some(&body),
            &TrimRules::default(),
            background,
            &opts,
            NoiseSchedule::default(),
        )
        .unwrap();
        let targets = banks.into_iter().map(|b| b[&ConditionRole::Conditional].clone()).collect();
        let init = init_from_surface(&SurfaceSource::Humanoid(body), count, &mut rng).unwrap();
        Fixture { framing, cameras, conds, oracle, targets, init, background }
    }

    pub fn stage1_rates() -> LearningRates {
        LearningRates {
            center: 1.6e-4,
            center_final: 1.6e-6,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 1e-2,
        }
    }

    /// Mean squared error against the targets over all fixture views.
    pub fn loss(f: &Fixture, cloud: &GaussianCloud) -> f64 {
        let opts = RenderOptions::default();
        f.cameras
            .iter()
            .zip(&f.targets)
            .map(|(c, t)| render(cloud, c, f.background, &opts).unwrap().color.mse(t).unwrap())
            .sum::<f64>()
            / f.cameras.len() as f64
    }

    pub fn psnr(mse: f64) -> f64 {
        -10.0 * mse.log10()
    }

    /// Runs `steps` distillation steps and returns the loss after each
    /// `checkpoint` steps (and at the end).
    pub fn run(f: &Fixture, mode: DistillMode, steps: u32, seed: u64, checkpoint: u32) -> (GaussianCloud, Vec<(u32, f64)>) {
        let noise = NoiseSchedule::default();
        let cfg = GuidanceConfig { mode, background: f.background, ..GuidanceConfig::default() };
        let schedule = (mode == DistillMode::Ahds).then(|| {
            let table = PhaseTable::default().scaled_to(steps).unwrap();
            AdaptiveSchedule::fit(&table, &SearchGrid::default(), 0).unwrap()
        });
        let ctx = Distiller {
            predictor: &f.oracle,
            noise: &noise,
            schedule: schedule.as_ref(),
            cfg: &cfg,
            render: RenderOptions::default(),
        };
        let mut cloud = f.init.clone();
        let mut opt = CloudOptimizer::new(cloud.len(), stage1_rates(), AdamHyper::default(), steps as u64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut history = vec![(0, loss(f, &cloud))];
        for i in 1..=steps {
            let v = rng.random_range(0..f.cameras.len());
            distill_step(&mut cloud, &mut opt, &f.cameras[v], &f.conds[v], &ctx, i, &mut rng).unwrap();
            if i % checkpoint == 0 || i == steps {
                history.push((i, loss(f, &cloud)));
            }
        }
        (cloud, history)
    }
}

pub mod ring {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use splatkin_core::pipeline::{reference_avatar, Framing};
    use splatkin_core::splat::*;
    use splatkin_core::vcr::ViewRing;
    use splatkin_core::Image;

    /// Avatar renders around the default ring, each tinted and blotched
    /// differently so neighbouring views disagree.
    pub fn inconsistent_views(seed: u64, count: usize, size: usize) -> (ViewRing, Vec<Image>, Vec<Image>) {
        let ring = ViewRing::default();
        let body = CapsuleHumanoid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let avatar = reference_avatar(&body, count, 0.85, &mut rng).unwrap();
        let framing = Framing { size, ..Framing::default() };
        let opts = RenderOptions::default();
        let clean: Vec<Image> = ring
            .azimuths()
            .iter()
            .map(|&az| render(&avatar, &framing.camera(az, 0.0), [1.0; 3], &opts).unwrap().color)
            .collect();
        let perturbed = clean
            .iter()
            .map(|img| {
                let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.08..0.08));
                let (cx, cy) = (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
                let blob: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
                let r2 = (size as f64 / 6.0).powi(2);
                let mut out = img.clone();
                for y in 0..size {
                    for x in 0..size {
                        let g = (-((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / r2).exp();
                        for (c, v) in out.pixel_mut(x, y).iter_mut().enumerate() {
                            *v = (*v + tint[c] + g * blob[c]).clamp(0.0, 1.0);
                        }
                    }
                }
                out
            })
            .collect();
        (ring, clean, perturbed)
    }
}

/// Finite-difference checks of the renderer backward pass and the
/// reconstruction loss.
pub mod fd {
    use super::*;
    use splatkin_core::recon::recon_loss;
    use splatkin_core::splat::{render, render_backward, RenderOptions};

    #[derive(Default)]
    pub struct FdStats {
        pub checked: usize,
        pub failures: Vec<String>,
    }

    /// Every parameter of every splat in one small random scene.
    pub fn check_scene_gradients(seed: u64, stats: &mut FdStats) {
        let s = random_scene(seed, 5, 16, 0.8);
        let up = random_upstream(seed, s.camera.width, s.camera.height);
        let opts = RenderOptions::default();
        let mut cloud = s.cloud.clone();
        let out = render(&cloud, &s.camera, s.background, &opts.clone().with_trace()).unwrap();
        let grads = render_backward(&mut cloud, &out, &up).unwrap();

        let h = 1e-3;
        let loss = |c: &GaussianCloud| weighted_sum(&render(c, &s.camera, s.background, &opts).unwrap().color, &up);
        let scene_max = grads.norms().iter().cloned().fold(0.0, f64::max);
        let floor = 1e-5 * scene_max + 1e-8;

        for i in 0..cloud.len() {
            let mut probe = |name: &str, k: usize, analytic: f64, get: &dyn Fn(&Gaussian3D) -> f64, set: &dyn Fn(&mut Gaussian3D, f64)| {
                let x0 = get(cloud.get(i));
                let mut c = cloud.clone();
                let mut eval = |v: f64| {
                    set(&mut c.gaussians_mut()[i], v);
                    loss(&c)
                };
                let numeric = (eval(x0 + h) - eval(x0 - h)) / (2.0 * h);
                stats.checked += 1;
                if !grad_close(analytic, numeric, floor) {
                    stats.failures.push(format!("seed {seed} splat {i} {name}[{k}]: analytic {analytic:e} numeric {numeric:e}"));
                }
            };
            for k in 0..3 {
                probe("center", k, grads.center[i][k], &|g| g.center[k], &|g, v| g.center[k] = v);
                probe("log_scale", k, grads.log_scale[i][k], &|g| g.log_scale[k], &|g, v| g.log_scale[k] = v);
                probe("color", k, grads.color[i][k], &|g| g.color[k], &|g, v| g.color[k] = v);
            }
            for k in 0..4 {
                probe("rotation", k, grads.rotation[i][k], &|g| g.rotation[k], &|g, v| g.rotation[k] = v);
            }
            probe("opacity", 0, grads.opacity_logit[i], &|g| g.opacity_logit, &|g, v| g.opacity_logit = v);
        }
    }

    pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::from_vec(w, h, 3, (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Twenty random pixels of the loss gradient against a random target.
    pub fn check_loss_gradients(seed: u64, stats: &mut FdStats) {
        let scene = random_scene(seed, 12, 12, 0.9);
        let mut rendered = render(&scene.cloud, &scene.camera, scene.background, &RenderOptions::default()).unwrap().color;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let target = random_image(&mut rng, rendered.width(), rendered.height());
        let (l1, perc) = if seed % 3 == 0 { (0.0, 15.0) } else { (10.0, 15.0) };
        let (_, grad) = recon_loss(&rendered, &target, l1, perc).unwrap();
        for _ in 0..20 {
            let k = rng.random_range(0..rendered.len());
            let x0 = rendered.data()[k];
            let numeric = {
                let cell = std::cell::RefCell::new(&mut rendered);
                central_difference(
                    || recon_loss(&cell.borrow(), &target, l1, perc).unwrap().0,
                    |v| cell.borrow_mut().data_mut()[k] = v,
                    x0,
                    1e-6,
                )
            };
            stats.checked += 1;
            if !grad_close(grad.data()[k], numeric, 1e-9) {
                stats.failures.push(format!("seed {seed} px {k}: analytic {:e} numeric {numeric:e}", grad.data()[k]));
            }
        }
    }
}

/// Plain-loop versions of the schedule objective and t–i curve for the
/// default phase table.
pub mod sched {
    use splatkin_core::schedule::{w_dg, ScheduleParams};

    pub const TARGET: [f64; 3] = [900.0 / 2400.0, 500.0 / 2400.0, 1000.0 / 2400.0];

    fn density(t: f64, s: f64, mode: f64) -> f64 {
        (-(t - mode).powi(2) / (2.0 * s * s)).exp() / (2.0 * std::f64::consts::PI * s * s).sqrt()
    }

    pub fn oracle_objective(s1: f64, s2: f64, mode: f64) -> f64 {
        let mut z = 0.0;
        let mut m = [0.0; 3];
        for t in 1..=1000u32 {
            let v = density(t as f64, if t as f64 <= mode { s1 } else { s2 }, mode);
            z += v;
            match t {
                20..=349 => m[0] += v,
                350..=449 => m[1] += v,
                450..=800 => m[2] += v,
                _ => {}
            }
        }
        (0..3).map(|k| (m[k] / z - TARGET[k]).powi(2)).sum()
    }

    /// Exhaustive minimum on a grid four times finer than the library's
    /// coarse pass. Left and right branch sums are tabulated per
    /// (spread, mode) and combined.
    pub fn fine_grid_best() -> f64 {
        let spreads: Vec<f64> = (0..=156).map(|i| 10.0 + 2.5 * i as f64).collect();
        let modes: Vec<f64> = (0..=312).map(|k| 20.0 + 2.5 * k as f64).collect();
        let branch = |s: f64, mode: f64, left: bool| {
            let mut out = [0.0; 4];
            for t in 1..=1000u32 {
                let tf = t as f64;
                if (tf <= mode) != left {
                    continue;
                }
                let v = density(tf, s, mode);
                out[3] += v;
                match t {
                    20..=349 => out[0] += v,
                    350..=449 => out[1] += v,
                    450..=800 => out[2] += v,
                    _ => {}
                }
            }
            out
        };
        let mut best = f64::INFINITY;
        for &mode in &modes {
            let l: Vec<[f64; 4]> = spreads.iter().map(|&s| branch(s, mode, true)).collect();
            let r: Vec<[f64; 4]> = spreads.iter().map(|&s| branch(s, mode, false)).collect();
            for a in &l {
                for b in &r {
                    let z = a[3] + b[3];
                    let obj: f64 = (0..3).map(|k| ((a[k] + b[k]) / z - TARGET[k]).powi(2)).sum();
                    best = best.min(obj);
                }
            }
        }
        best
    }

    /// Scans the upper-tail sums from scratch for each step.
    pub fn oracle_curve(p: &ScheduleParams, n: u32) -> Vec<u32> {
        let w: Vec<f64> = (1..=1000).map(|t| w_dg(t, p).unwrap()).collect();
        (1..=n)
            .map(|i| {
                let target = i as f64 / n as f64;
                let mut best = (f64::INFINITY, 0u32);
                for tau in 1..=1000u32 {
                    let mut s = 0.0;
                    for t in (tau..=1000).rev() {
                        s += w[t as usize - 1];
                    }
                    let gap = (s - target).abs();
                    if gap < best.0 {
                        best = (gap, tau);
                    }
                }
                best.1.clamp(20, 800)
            })
            .collect()
    }
}

pub mod attn {
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;
    use splatkin_core::vcr::Matrix;

    pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
    }

    /// Softmax attention written out element by element.
    pub fn loop_attn(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
        let d = q.ncols() as f64;
        let mut out = Matrix::zeros(q.nrows(), v.ncols());
        for i in 0..q.nrows() {
            let logits: Vec<f64> = (0..k.nrows())
                .map(|j| (0..q.ncols()).map(|c| q[(i, c)] * k[(j, c)]).sum::<f64>() / d.sqrt())
                .collect();
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = w.iter().sum();
            for c in 0..v.ncols() {
                out[(i, c)] = (0..k.nrows()).map(|j| w[j] / z * v[(j, c)]).sum();
            }
        }
        out
    }

    pub fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        a.shape() == b.shape() && (a - b).abs().max() <= tol
    }
}

/// Oracles with a distinct random target for every condition role.
pub mod score {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use splatkin_core::guidance::*;
    use splatkin_core::Image;

    pub fn random_image(seed: u64, lo: f64, hi: f64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(6, 5, 3, (0..90).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    pub fn role_oracle(seed: u64) -> (MockOracle, ViewConditions) {
        let conds = ViewConditions::from_prompts(&Prompts::default(), None);
        let mut oracle = MockOracle::new(NoiseSchedule::default());
        for (k, role) in ConditionRole::ALL.into_iter().enumerate() {
            oracle.insert(conds.get(role), random_image(seed * 10 + k as u64, 0.0, 1.0));
        }
        (oracle, conds)
    }

    pub fn pred(o: &MockOracle, x: &Image, t: u32, c: &Condition) -> Image {
        o.predict(x, t, c).unwrap()
    }
}

/// Avatar seen from eight cameras, for stage-two runs.
pub mod recon {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use splatkin_core::pipeline::{reference_avatar, Framing};
    use splatkin_core::recon::*;
    use splatkin_core::splat::*;

    pub struct Setup {
        pub cloud: GaussianCloud,
        pub cameras: Vec<Camera>,
    }

    pub fn avatar(seed: u64, count: usize, size: usize) -> Setup {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = reference_avatar(&CapsuleHumanoid::default(), count, 0.85, &mut rng).unwrap();
        let framing = Framing { size, ..Framing::default() };
        let cameras = (0..8).map(|k| framing.camera(45.0 * k as f64, if k % 2 == 0 { 0.0 } else { 10.0 })).collect();
        Setup { cloud, cameras }
    }

    pub fn targets_of(cloud: &GaussianCloud, cameras: &[Camera], cfg: &ReconConfig) -> Vec<TargetView> {
        cameras
            .iter()
            .map(|c| {
                let out = render(cloud, c, cfg.background, &RenderOptions::default()).unwrap();
                TargetView::new(c.clone(), out.color, &out.alpha, cfg.margin, cfg.factor).unwrap()
            })
            .collect()
    }

    /// Loss over all views before and after a default-length run from `s`
    /// toward targets rendered with each splat's colour channels rotated.
    pub fn recolored_run(s: &Setup) -> (f64, f64, Vec<StepLog>) {
        let cfg = ReconConfig::default();
        let mut recolored = s.cloud.clone();
        for g in recolored.gaussians_mut() {
            g.color = nalgebra::Vector3::new(g.color[1], g.color[2], g.color[0]);
        }
        let views = targets_of(&recolored, &s.cameras, &cfg);
        let mut cloud = s.cloud.clone();
        let all: Vec<usize> = (0..views.len()).collect();
        let (initial, _) = batch_loss(&cloud, &views, &all, &cfg, &RenderOptions::default()).unwrap();
        let log = optimize_stage2(&mut cloud, &views, &cfg, &RenderOptions::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(cloud.gaussians().iter().all(|g| g.is_finite()));
        let (last, _) = batch_loss(&cloud, &views, &all, &cfg, &RenderOptions::default()).unwrap();
        (initial, last, log)
    }
}

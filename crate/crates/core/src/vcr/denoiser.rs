//! A small deterministic denoiser with a single attention site.
//!
//! Images are cut into an 8×8 grid of patches. Each patch is encoded by its
//! 32 lowest-frequency DCT coefficients (interleaved over channels), giving a
//! 64×32 token matrix. A seeded linear mixer and one attention layer act on the
//! tokens; the attended tokens are decoded back as the clean estimate of the
//! low-frequency content, while the remaining high-frequency detail is shrunk
//! according to the noise level. Sampling is deterministic DDIM.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::attention::{AttentionFeatures, Matrix};
use crate::error::{Error, Result};
use crate::guidance::{add_noise, NoiseSchedule};
use crate::image::Image;

pub const PATCH_GRID: usize = 8;
pub const TOKENS: usize = PATCH_GRID * PATCH_GRID;
pub const TOKEN_DIM: usize = 32;

/// Prior variance of the per-pixel detail the token basis does not capture.
const DETAIL_VARIANCE: f64 = 0.01;
/// Prior variance of the mean (DC) coefficients.
const DC_VARIANCE: f64 = 16.0;
/// Prior variance of the first AC band; band `f` gets this over `f²`.
const AC_VARIANCE: f64 = 1.0;
/// Query/key gain; sets how sharply tokens attend to similar tokens.
const ATTN_GAIN: f64 = 3.0;
const MIXER_SCALE: f64 = 0.05;
const PERTURB_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VcrConfig {
    /// Denoising steps.
    pub steps: u32,
    /// Timestep the renders are noised to before refinement.
    pub t_ref: u32,
    pub lambda_self: f64,
    /// Main views attend across all main views and key views attend to their
    /// nearest main view. Off means plain self-attention for both.
    pub mutual: bool,
    pub denoiser_seed: u64,
}

impl Default for VcrConfig {
    fn default() -> Self {
        Self {
            steps: 8,
            t_ref: 300,
            lambda_self: 0.55,
            mutual: true,
            denoiser_seed: 0,
        }
    }
}

impl VcrConfig {
    /// Settings that make refinement equal independent per-view denoising.
    pub fn disabled(&self) -> Self {
        Self {
            lambda_self: 1.0,
            mutual: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.t_ref < self.steps {
            return Err(Error::Param(format!("{} steps from t = {}", self.steps, self.t_ref)));
        }
        if !(0.0..=1.0).contains(&self.lambda_self) {
            return Err(Error::Param(format!("lambda_self {} outside [0, 1]", self.lambda_self)));
        }
        Ok(())
    }
}

/// `(t, t_next)` pairs from `t_ref` down to 0 in `steps` even strides.
pub fn ddim_timesteps(t_ref: u32, steps: u32) -> Result<Vec<(u32, u32)>> {
    if steps == 0 || t_ref < steps {
        return Err(Error::Param(format!("{steps} steps from t = {t_ref}")));
    }
    let at = |k: u32| ((t_ref as f64) * (steps - k) as f64 / steps as f64).round() as u32;
    Ok((0..steps).map(|k| (at(k), at(k + 1))).collect())
}

/// Orthonormal DCT-II vectors of a `pw×ph` patch, lowest frequencies first,
/// as the columns of a `(pw·ph·channels) × TOKEN_DIM` matrix, and the prior
/// variance of each coefficient.
fn dct_basis(pw: usize, ph: usize, channels: usize) -> (Matrix, Vec<f64>) {
    let mut freqs: Vec<(usize, usize)> = (0..pw).flat_map(|u| (0..ph).map(move |v| (u, v))).collect();
    freqs.sort_by_key(|&(u, v)| (u + v, v));
    let coef = |k: usize, n: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    let len = pw * ph * channels;
    let mut basis = Matrix::zeros(len, TOKEN_DIM);
    let mut prior = Vec::with_capacity(TOKEN_DIM);
    for col in 0..TOKEN_DIM {
        let (u, v) = freqs[col / channels];
        let c = col % channels;
        prior.push(match u + v {
            0 => DC_VARIANCE,
            f => AC_VARIANCE / (f * f) as f64,
        });
        for py in 0..ph {
            for px in 0..pw {
                let cx = (PI * (2 * px + 1) as f64 * u as f64 / (2 * pw) as f64).cos();
                let cy = (PI * (2 * py + 1) as f64 * v as f64 / (2 * ph) as f64).cos();
                basis[((py * pw + px) * channels + c, col)] = coef(u, pw) * coef(v, ph) * cx * cy;
            }
        }
    }
    (basis, prior)
}

/// Queries and keys whose dot products are `−‖aᵢ − aⱼ‖²/2` up to a per-query
/// constant, where `a` is `m` without its last column. The last column carries
/// a unit query and the key's squared-norm bias instead.
fn distance_qk(m: &Matrix, gain: f64) -> (Matrix, Matrix) {
    let last = m.ncols() - 1;
    let mut q = m * gain;
    let mut k = q.clone();
    for r in 0..m.nrows() {
        let n2 = q.row(r).columns(0, last).norm_squared();
        q[(r, last)] = 1.0;
        k[(r, last)] = -0.5 * n2;
    }
    (q, k)
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Everything one denoising step computes before its attention site.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub t: u32,
    /// Patches of `x_t / √ᾱ_t`, one row per token.
    patches: Matrix,
    tokens: Matrix,
    pub features: AttentionFeatures,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDenoiser {
    width: usize,
    height: usize,
    basis: Matrix,
    prior: Vec<f64>,
    /// Mean the DC coefficients shrink toward (mid grey).
    dc_mean: f64,
    mixer: Matrix,
    /// Shared query/key projection.
    wqk: Matrix,
    wv: Matrix,
    /// Output head; the inverse of `wv`, so attention that returns a token's
    /// own value reproduces that token.
    wo: Matrix,
    noise: NoiseSchedule,
}

impl ToyDenoiser {
    /// Weights for RGB images of the given size. Both sides must split into
    /// the patch grid, with patches large enough for the token basis.
    pub fn new(width: usize, height: usize, seed: u64, noise: NoiseSchedule) -> Result<Self> {
        let (pw, ph) = (width / PATCH_GRID, height / PATCH_GRID);
        if width % PATCH_GRID != 0 || height % PATCH_GRID != 0 || pw * ph * 3 < TOKEN_DIM + 1 {
            return Err(Error::Shape(format!(
                "{width}x{height} does not split into {PATCH_GRID}x{PATCH_GRID} patches of at least {} pixels",
                TOKEN_DIM.div_ceil(3)
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Zero row sums: the mixer leaves content shared by all tokens alone.
        let mut mixer = gaussian_matrix(TOKENS, TOKENS, MIXER_SCALE / (TOKENS as f64).sqrt(), &mut rng);
        for mut row in mixer.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
        let near_identity = |rng: &mut ChaCha8Rng, gain: f64| {
            (Matrix::identity(TOKEN_DIM, TOKEN_DIM)
                + gaussian_matrix(TOKEN_DIM, TOKEN_DIM, PERTURB_SCALE / (TOKEN_DIM as f64).sqrt(), rng))
                * gain
        };
        let wqk = near_identity(&mut rng, 1.0);
        let wv = near_identity(&mut rng, 1.0);
        let (basis, prior) = dct_basis(pw, ph, 3);
        Ok(Self {
            width,
            height,
            basis,
            prior,
            dc_mean: 0.5 * ((pw * ph) as f64).sqrt(),
            mixer,
            wqk,
            wo: wv
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Init("singular value projection".into()))?,
            wv,
            noise,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn noise(&self) -> &NoiseSchedule {
        &self.noise
    }

    fn check(&self, img: &Image) -> Result<()> {
        if img.width() != self.width || img.height() != self.height || img.channels() != 3 {
            return Err(Error::Shape(format!(
                "denoiser expects {}x{}x3, got {}x{}x{}",
                self.width,
                self.height,
                img.width(),
                img.height(),
                img.channels()
            )));
        }
        Ok(())
    }

    fn patchify(&self, img: &Image) -> Matrix {
        let (pw, ph) = (self.width / PATCH_GRID, self.height / PATCH_GRID);
        let mut m = Matrix::zeros(TOKENS, pw * ph * 3);
        for gy in 0..PATCH_GRID {
            for gx in 0..PATCH_GRID {
                let row = gy * PATCH_GRID + gx;
                for py in 0..ph {
                    for px in 0..pw {
                        let p = img.pixel(gx * pw + px, gy * ph + py);
                        for c in 0..3 {
                            m[(row, (py * pw + px) * 3 + c)] = p[c];
                        }
                    }
                }
            }
        }
        m
    }

    fn unpatchify(&self, m: &Matrix) -> Image {
        let (pw, ph) = (self.width / PATCH_GRID, self.height / PATCH_GRID);
        let mut img = Image::new(self.width, self.height, 3);
        for gy in 0..PATCH_GRID {
            for gx in 0..PATCH_GRID {
                let row = gy * PATCH_GRID + gx;
                for py in 0..ph {
                    for px in 0..pw {
                        let p = img.pixel_mut(gx * pw + px, gy * ph + py);
                        for c in 0..3 {
                            p[c] = m[(row, (py * pw + px) * 3 + c)];
                        }
                    }
                }
            }
        }
        img
    }

    /// Token features of a clean image (64 × 32).
    pub fn encode(&self, img: &Image) -> Result<Matrix> {
        self.check(img)?;
        Ok(self.patchify(img) * &self.basis)
    }

    /// Queries, keys and values of `x_t` at timestep `t`.
    pub fn prepare(&self, x_t: &Image, t: u32) -> Result<Prepared> {
        self.check(x_t)?;
        let ab = self.noise.alpha_bar(t)?;
        let patches = self.patchify(x_t) / ab.sqrt();
        let tokens = &patches * &self.basis;
        let sigma2 = (1.0 - ab) / ab;
        let mut shrunk = tokens.clone();
        for (mut col, &p) in shrunk.column_iter_mut().zip(&self.prior) {
            let mean = if p == DC_VARIANCE { self.dc_mean } else { 0.0 };
            col.apply(|c| *c = mean + (*c - mean) * p / (p + sigma2));
        }
        let hidden = &shrunk + &self.mixer * &shrunk;
        let (q, k) = distance_qk(&(&hidden * &self.wqk), ATTN_GAIN);
        let features = AttentionFeatures::new(q, k, &hidden * &self.wv)?;
        Ok(Prepared {
            t,
            patches,
            tokens,
            features,
        })
    }

    /// Decodes the attention output into a clean estimate and takes the DDIM
    /// step from `p.t` to `t_next`.
    pub fn complete(&self, x_t: &Image, p: &Prepared, attended: &Matrix, t_next: u32) -> Result<Image> {
        if attended.shape() != (TOKENS, TOKEN_DIM) {
            return Err(Error::Shape(format!("attention output {:?}", attended.shape())));
        }
        let ab = self.noise.alpha_bar(p.t)?;
        let sigma2 = (1.0 - ab) / ab;
        let shrink = DETAIL_VARIANCE / (DETAIL_VARIANCE + sigma2);
        let bt = self.basis.transpose();
        let detail = &p.patches - &p.tokens * &bt;
        let x0 = self.unpatchify(&((attended * &self.wo) * &bt + detail * shrink));
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let eps = x_t.zip_map(&x0, |x, c| (x - a * c) / s)?;
        let next = self.noise.alpha_bar_or_one(t_next)?;
        let (an, sn) = (next.sqrt(), (1.0 - next).sqrt());
        x0.zip_map(&eps, |c, e| an * c + sn * e)
    }

    /// Noises `image` to `cfg.t_ref` with `eps` and denoises it on its own.
    pub fn denoise(&self, image: &Image, eps: &Image, cfg: &VcrConfig) -> Result<Image> {
        cfg.validate()?;
        let mut x = add_noise(&self.noise, image, cfg.t_ref, eps)?;
        for (t, t_next) in ddim_timesteps(cfg.t_ref, cfg.steps)? {
            let p = self.prepare(&x, t)?;
            let o = p.features.attend()?;
            x = self.complete(&x, &p, &o, t_next)?;
        }
        Ok(x.map(|v| v.clamp(0.0, 1.0)))
    }
}

//! Ring refinement: main views first, then key views against their main view,
//! then intermediate views fused with their two guides.

use rand::Rng;
use rayon::prelude::*;

use super::attention::{attn, fused_attention, mutual_attention, stack_rows, FusionWeights, Matrix};
use super::denoiser::{ddim_timesteps, Prepared, ToyDenoiser, VcrConfig};
use super::ring::{Guidance, ViewRing, ViewRole};
use crate::error::{Error, Result};
use crate::guidance::{add_noise, sample_noise};
use crate::image::Image;

fn check_inputs(images: &[Image], ring: &ViewRing, den: &ToyDenoiser) -> Result<()> {
    ring.validate()?;
    if images.len() != ring.len() {
        return Err(Error::Topology(format!("{} images for {} ring views", images.len(), ring.len())));
    }
    if let Some(bad) = images
        .iter()
        .find(|i| i.width() != den.width() || i.height() != den.height() || i.channels() != 3)
    {
        return Err(Error::Shape(format!(
            "ring image {}x{}x{} vs denoiser {}x{}x3",
            bad.width(),
            bad.height(),
            bad.channels(),
            den.width(),
            den.height()
        )));
    }
    Ok(())
}

/// Noise shared by every view, so identical renders stay identical.
fn shared_noise<R: Rng>(images: &[Image], rng: &mut R) -> Result<Image> {
    images
        .first()
        .map(|i| sample_noise(i, rng))
        .ok_or_else(|| Error::Topology("empty ring".into()))
}

/// Refines one image per ring view. The features each pass reads are the
/// cached pre-attention features of the views handled in earlier passes of the
/// same step, so views within a pass are independent of each other.
pub fn refine_ring<R: Rng>(
    images: &[Image],
    ring: &ViewRing,
    den: &ToyDenoiser,
    cfg: &VcrConfig,
    rng: &mut R,
) -> Result<Vec<Image>> {
    cfg.validate()?;
    check_inputs(images, ring, den)?;
    let eps = shared_noise(images, rng)?;
    let guidance = (0..ring.len()).map(|i| ring.guidance(i)).collect::<Result<Vec<_>>>()?;
    let mains = ring.indices(ViewRole::Main);
    let passes = [mains.clone(), ring.indices(ViewRole::Key), ring.indices(ViewRole::Intermediate)];

    let mut x = images
        .iter()
        .map(|img| add_noise(den.noise(), img, cfg.t_ref, &eps))
        .collect::<Result<Vec<_>>>()?;
    for (t, t_next) in ddim_timesteps(cfg.t_ref, cfg.steps)? {
        let mut cache: Vec<Option<Prepared>> = vec![None; ring.len()];
        for pass in &passes {
            let prepared = pass
                .par_iter()
                .map(|&i| den.prepare(&x[i], t))
                .collect::<Result<Vec<_>>>()?;
            for (&i, p) in pass.iter().zip(prepared) {
                cache[i] = Some(p);
            }
            let cached = |j: usize| cache[j].as_ref().expect("earlier pass prepared this view");
            let main_kv = if cfg.mutual && pass == &passes[0] {
                let ks: Vec<&Matrix> = mains.iter().map(|&j| &cached(j).features.k).collect();
                let vs: Vec<&Matrix> = mains.iter().map(|&j| &cached(j).features.v).collect();
                Some((stack_rows(&ks)?, stack_rows(&vs)?))
            } else {
                None
            };
            let updated = pass
                .par_iter()
                .map(|&i| {
                    let own = &cached(i).features;
                    let o = match guidance[i] {
                        Guidance::Main => match &main_kv {
                            Some((k, v)) => attn(&own.q, k, v)?,
                            None => own.attend()?,
                        },
                        Guidance::Key { main } if cfg.mutual => {
                            let m = &cached(main).features;
                            mutual_attention(&own.q, &own.k, &own.v, &m.k, &m.v)?
                        }
                        Guidance::Key { .. } => own.attend()?,
                        Guidance::Intermediate { left, right, eta_left, eta_right } => {
                            let (l, r) = (&cached(left).features, &cached(right).features);
                            let w = FusionWeights {
                                eta_left,
                                eta_right,
                                lambda_self: cfg.lambda_self,
                            };
                            fused_attention(&own.q, &own.k, &own.v, &l.k, &l.v, &r.k, &r.v, w)?
                        }
                    };
                    den.complete(&x[i], cached(i), &o, t_next)
                })
                .collect::<Result<Vec<_>>>()?;
            for (&i, img) in pass.iter().zip(updated) {
                x[i] = img;
            }
        }
    }
    Ok(x.into_iter().map(|img| img.map(|v| v.clamp(0.0, 1.0))).collect())
}

/// Every view denoised on its own from the same shared noise `refine_ring`
/// would draw with this `rng` state.
pub fn denoise_independent<R: Rng>(
    images: &[Image],
    ring: &ViewRing,
    den: &ToyDenoiser,
    cfg: &VcrConfig,
    rng: &mut R,
) -> Result<Vec<Image>> {
    check_inputs(images, ring, den)?;
    let eps = shared_noise(images, rng)?;
    images.par_iter().map(|img| den.denoise(img, &eps, cfg)).collect()
}

/// Mean squared token-feature difference between ring neighbours.
pub fn consistency(images: &[Image], ring: &ViewRing, den: &ToyDenoiser) -> Result<f64> {
    check_inputs(images, ring, den)?;
    let feats = images.iter().map(|i| den.encode(i)).collect::<Result<Vec<_>>>()?;
    let pairs = ring.adjacent_pairs();
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pairs
        .iter()
        .map(|&(a, b)| (&feats[a] - &feats[b]).norm_squared() / feats[a].len() as f64)
        .sum();
    Ok(total / pairs.len() as f64)
}

//! The epsilon-predictor contract and a closed-form mock that inverts DDPM
//! noising toward a per-condition target image.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::condition::{Condition, ConditionRole, Fingerprint, Prompts, ViewConditions};
use super::noise::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::posecond::TrimRules;
use crate::splat::{Camera, CapsuleHumanoid};

pub trait EpsilonPredictor: Sync {
    /// Predicted noise for `x_t`; same shape as `x_t`, deterministic.
    fn predict(&self, x_t: &Image, t: u32, cond: &Condition) -> Result<Image>;
}

/// `predict(x_t, t, c) = (x_t − √ᾱ_t·target(c)) / √(1 − ᾱ_t)`.
#[derive(Clone, Debug, Default)]
pub struct MockOracle {
    noise: NoiseSchedule,
    bank: HashMap<Fingerprint, Image>,
    fallback: Option<Image>,
}

impl MockOracle {
    pub fn new(noise: NoiseSchedule) -> Self {
        Self {
            noise,
            bank: HashMap::new(),
            fallback: None,
        }
    }

    pub fn insert(&mut self, cond: &Condition, target: Image) {
        self.bank.insert(cond.fingerprint(), target);
    }

    /// Target for conditions missing from the bank.
    pub fn with_fallback(mut self, target: Image) -> Self {
        self.fallback = Some(target);
        self
    }

    pub fn target(&self, cond: &Condition) -> Option<&Image> {
        self.bank.get(&cond.fingerprint()).or(self.fallback.as_ref())
    }

    pub fn len(&self) -> usize {
        self.bank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bank.is_empty()
    }

    pub fn noise(&self) -> &NoiseSchedule {
        &self.noise
    }
}

impl EpsilonPredictor for MockOracle {
    fn predict(&self, x_t: &Image, t: u32, cond: &Condition) -> Result<Image> {
        let target = self
            .target(cond)
            .ok_or_else(|| Error::UnknownCondition(cond.fingerprint().to_string()))?;
        let ab = self.noise.alpha_bar(t)?;
        let (a, inv) = (ab.sqrt(), 1.0 / (1.0 - ab).sqrt());
        x_t.zip_map(target, |x, y| (x - a * y) * inv)
    }
}

/// One view of an on-disk target bank: its camera and a PPM per role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankView {
    pub camera: Camera,
    pub targets: BTreeMap<ConditionRole, String>,
}

/// `manifest.json` of a target bank directory. Conditions are rebuilt from
/// the prompts and, when `use_pose` is set, from the built-in humanoid's
/// skeleton trimmed for each camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub prompts: Prompts,
    pub use_pose: bool,
    #[serde(default)]
    pub pose_rules: TrimRules,
    pub views: Vec<BankView>,
    #[serde(default)]
    pub fallback: Option<String>,
}

pub const BANK_MANIFEST: &str = "manifest.json";

impl BankManifest {
    pub fn conditions(&self, cam: &Camera) -> Result<ViewConditions> {
        let body = self.use_pose.then(CapsuleHumanoid::default);
        ViewConditions::for_camera(&self.prompts, body.as_ref(), &self.pose_rules, cam)
    }
}

/// Reads a bank directory into an oracle and returns the cameras it covers.
pub fn load_bank(dir: impl AsRef<Path>, noise: NoiseSchedule) -> Result<(MockOracle, BankManifest)> {
    let dir = dir.as_ref();
    let path = dir.join(BANK_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: BankManifest = serde_json::from_str(&text)?;
    let mut oracle = MockOracle::new(noise);
    for view in &manifest.views {
        let conds = manifest.conditions(&view.camera)?;
        for (role, file) in &view.targets {
            oracle.insert(conds.get(*role), Image::read_ppm(dir.join(file))?);
        }
    }
    if let Some(f) = &manifest.fallback {
        oracle = oracle.with_fallback(Image::read_ppm(dir.join(f))?);
    }
    Ok((oracle, manifest))
}

/// Writes `targets[v][role]` for every view plus the manifest.
pub fn write_bank(
    dir: impl AsRef<Path>,
    prompts: &Prompts,
    use_pose: bool,
    pose_rules: &TrimRules,
    views: &[(Camera, BTreeMap<ConditionRole, Image>)],
) -> Result<BankManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::with_capacity(views.len());
    for (v, (cam, targets)) in views.iter().enumerate() {
        let mut files = BTreeMap::new();
        for (role, img) in targets {
            let name = format!("view{v:03}_{}.ppm", role.name());
            img.write_ppm(dir.join(&name))?;
            files.insert(*role, name);
        }
        out.push(BankView {
            camera: cam.clone(),
            targets: files,
        });
    }
    let manifest = BankManifest {
        prompts: prompts.clone(),
        use_pose,
        pose_rules: *pose_rules,
        views: out,
        fallback: None,
    };
    let path = dir.join(BANK_MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::noise::add_noise;

    #[test]
    fn inverts_noising_of_own_target() {
        let noise = NoiseSchedule::default();
        let cond = ViewConditions::from_prompts(&Prompts::default(), None).conditional;
        let target = Image::from_vec(2, 1, 3, vec![0.1, 0.2, 0.3, 0.9, 0.8, 0.7]).unwrap();
        let eps = Image::from_vec(2, 1, 3, vec![0.5, -1.0, 2.0, 0.0, 0.3, -0.7]).unwrap();
        let mut oracle = MockOracle::new(noise.clone());
        oracle.insert(&cond, target.clone());
        for t in [1, 170, 500, 1000] {
            let xt = add_noise(&noise, &target, t, &eps).unwrap();
            assert!(oracle.predict(&xt, t, &cond).unwrap().max_abs_diff(&eps) < 1e-6);
        }
    }

    #[test]
    fn unknown_condition_without_fallback() {
        let oracle = MockOracle::new(NoiseSchedule::default());
        let cond = ViewConditions::from_prompts(&Prompts::default(), None).negative;
        let x = Image::new(1, 1, 3);
        assert!(matches!(oracle.predict(&x, 10, &cond), Err(Error::UnknownCondition(_))));
        let oracle = oracle.with_fallback(Image::filled(1, 1, 3, 0.5));
        assert!(oracle.predict(&x, 10, &cond).is_ok());
    }

    #[test]
    fn bank_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let prompts = Prompts::default();
        let rules = TrimRules::default();
        let cam = Camera::perspective(90.0, 0.0, 3.0, 8, 10.0);
        let mut targets = BTreeMap::new();
        targets.insert(ConditionRole::Conditional, Image::filled(8, 8, 3, 1.0));
        write_bank(dir.path(), &prompts, true, &rules, &[(cam.clone(), targets)]).unwrap();
        let (oracle, manifest) = load_bank(dir.path(), NoiseSchedule::default()).unwrap();
        assert_eq!(oracle.len(), 1);
        let conds = manifest.conditions(&cam).unwrap();
        assert_eq!(oracle.target(&conds.conditional), Some(&Image::filled(8, 8, 3, 1.0)));
        assert!(oracle.target(&conds.rectifier).is_none());
    }
}

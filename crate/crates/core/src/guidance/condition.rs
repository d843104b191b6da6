//! Conditioning inputs for epsilon predictors: text and identity embeddings
//! plus an optional view-trimmed pose skeleton.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::posecond::{trim_skeleton, PoseSkeleton, TrimRules};
use crate::splat::{Camera, CapsuleHumanoid};

pub const EMBED_DIM: usize = 32;

/// Deterministic unit-norm embedding derived from a label.
pub fn embed_label(label: &str) -> Vec<f64> {
    let seed: [u8; 32] = Sha256::digest(label.as_bytes()).into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    let v: Vec<f64> = (0..EMBED_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Canonical null condition shared by the null text and the zero image condition.
pub fn null_embedding() -> Vec<f64> {
    vec![0.0; EMBED_DIM]
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub [u8; 32]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub text: Vec<f64>,
    pub identity: Vec<f64>,
    pub pose: Option<PoseSkeleton>,
}

impl Condition {
    pub fn new(text: Vec<f64>, identity: Vec<f64>, pose: Option<PoseSkeleton>) -> Self {
        Self { text, identity, pose }
    }

    /// Exact hash of every byte that makes up the condition.
    pub fn fingerprint(&self) -> Fingerprint {
        let mut h = Sha256::new();
        h.update((self.text.len() as u64).to_le_bytes());
        for v in &self.text {
            h.update(v.to_le_bytes());
        }
        h.update((self.identity.len() as u64).to_le_bytes());
        for v in &self.identity {
            h.update(v.to_le_bytes());
        }
        match &self.pose {
            None => h.update([0u8]),
            Some(p) => {
                h.update([1u8]);
                for (name, k) in &p.keypoints {
                    h.update((name.len() as u64).to_le_bytes());
                    h.update(name.as_bytes());
                    h.update(k.x.to_le_bytes());
                    h.update(k.y.to_le_bytes());
                    h.update([k.visible as u8]);
                }
            }
        }
        Fingerprint(h.finalize().into())
    }
}

/// Labels the embeddings are derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Prompts {
    pub text: String,
    pub negative_text: String,
    pub identity: String,
    /// Stand-in for the mean face, used by the rectifier.
    pub mean_identity: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            text: "a full-body photo of a person".into(),
            negative_text: "blurry, low quality, deformed".into(),
            identity: "subject-0".into(),
            mean_identity: "mean-face".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionRole {
    /// `(y, I_ip)`
    Conditional,
    /// `(y_φ, I_μ)`
    Rectifier,
    /// `(y₋, I_φ)`
    Negative,
    /// `(y, I_φ)`, text-only guidance.
    SdsConditional,
    /// `(y_φ, I_φ)`
    SdsNull,
}

impl ConditionRole {
    pub const ALL: [ConditionRole; 5] = [
        ConditionRole::Conditional,
        ConditionRole::Rectifier,
        ConditionRole::Negative,
        ConditionRole::SdsConditional,
        ConditionRole::SdsNull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConditionRole::Conditional => "conditional",
            ConditionRole::Rectifier => "rectifier",
            ConditionRole::Negative => "negative",
            ConditionRole::SdsConditional => "sds_conditional",
            ConditionRole::SdsNull => "sds_null",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }
}

/// Every condition one view needs, sharing that view's pose.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewConditions {
    pub conditional: Condition,
    pub rectifier: Condition,
    pub negative: Condition,
    pub sds_conditional: Condition,
    pub sds_null: Condition,
}

impl ViewConditions {
    pub fn from_prompts(prompts: &Prompts, pose: Option<PoseSkeleton>) -> Self {
        let y = embed_label(&format!("text:{}", prompts.text));
        let y_neg = embed_label(&format!("text:{}", prompts.negative_text));
        let id = embed_label(&format!("identity:{}", prompts.identity));
        let id_mean = embed_label(&format!("identity:{}", prompts.mean_identity));
        let c = |t: &Vec<f64>, i: &Vec<f64>| Condition::new(t.clone(), i.clone(), pose.clone());
        let null = null_embedding();
        Self {
            conditional: c(&y, &id),
            rectifier: c(&null, &id_mean),
            negative: c(&y_neg, &null),
            sds_conditional: c(&y, &null),
            sds_null: c(&null, &null),
        }
    }

    /// Conditions for `cam`, with the body's skeleton projected and trimmed
    /// for that view when a body is given.
    pub fn for_camera(prompts: &Prompts, body: Option<&CapsuleHumanoid>, rules: &TrimRules, cam: &Camera) -> Result<Self> {
        let pose = match body {
            Some(b) => Some(trim_skeleton(&PoseSkeleton::from_humanoid(b, cam), cam.azimuth, rules)?),
            None => None,
        };
        Ok(Self::from_prompts(prompts, pose))
    }

    pub fn get(&self, role: ConditionRole) -> &Condition {
        match role {
            ConditionRole::Conditional => &self.conditional,
            ConditionRole::Rectifier => &self.rectifier,
            ConditionRole::Negative => &self.negative,
            ConditionRole::SdsConditional => &self.sds_conditional,
            ConditionRole::SdsNull => &self.sds_null,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_are_deterministic_unit_vectors() {
        let a = embed_label("x");
        assert_eq!(a, embed_label("x"));
        assert_ne!(a, embed_label("y"));
        assert!((a.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roles_have_distinct_fingerprints() {
        let v = ViewConditions::from_prompts(&Prompts::default(), None);
        let mut prints: Vec<_> = ConditionRole::ALL.iter().map(|r| v.get(*r).fingerprint()).collect();
        prints.sort();
        prints.dedup();
        assert_eq!(prints.len(), 5);
    }

    #[test]
    fn pose_changes_fingerprint() {
        let body = CapsuleHumanoid::default();
        let rules = TrimRules::default();
        let p = Prompts::default();
        let a = ViewConditions::for_camera(&p, Some(&body), &rules, &Camera::perspective(0.0, 0.0, 3.0, 32, 40.0)).unwrap();
        let b = ViewConditions::for_camera(&p, Some(&body), &rules, &Camera::perspective(45.0, 0.0, 3.0, 32, 40.0)).unwrap();
        assert_ne!(a.conditional.fingerprint(), b.conditional.fingerprint());
        assert_eq!(a.conditional.fingerprint(), a.clone().conditional.fingerprint());
        assert_eq!(ConditionRole::from_name("sds_null"), Some(ConditionRole::SdsNull));
    }
}

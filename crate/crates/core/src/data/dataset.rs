//! Paired datasets: real pairs from disk or clean images plus a synthetic degradation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::degrade::{synthetic_scene, Degradation};
use super::image_io::{is_image_path, load_image};
use super::patch::{dual_pixel_concat, flip_augment, sample_patch, stack, ImagePair};
use crate::error::{io_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Denoise,
    DeblurDp,
    SrRefine,
    Enhance,
}

impl Task {
    pub fn default_degradation(self) -> Degradation {
        match self {
            Task::Denoise => Degradation::GaussianNoise { sigma: 25.0 },
            Task::DeblurDp => Degradation::DualPixelBlur { sigma: 1.5, shift: 1.0 },
            Task::SrRefine => Degradation::BicubicRefine { scale: 2 },
            Task::Enhance => Degradation::LowLight {
                gain: 0.25,
                gamma: 1.6,
                sigma: 2.0,
            },
        }
    }

    /// Model input channels for this task.
    pub fn in_channels(self) -> usize {
        if self == Task::DeblurDp {
            6
        } else {
            3
        }
    }
}

/// Where pairs come from.
///
/// With `root` set, clean images are read from `<root>/clean`. Their degraded counterparts are
/// either `<root>/degraded/<stem>.<ext>` (or `<stem>_L` / `<stem>_R` for dual-pixel input), or,
/// when `synth` is set, synthesised. Without `root`, `scenes` synthetic clean images of
/// `scene_size` pixels are generated and `synth` (or the task default) degrades them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub root: Option<PathBuf>,
    pub task: Task,
    pub synth: Option<Degradation>,
    pub scenes: usize,
    pub scene_size: usize,
    /// The last `val_count` images are held out for validation.
    pub val_count: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            root: None,
            task: Task::Denoise,
            synth: None,
            scenes: 24,
            scene_size: 64,
            val_count: 4,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn degradation(&self) -> Option<Degradation> {
        match (&self.root, self.synth) {
            (_, Some(d)) => Some(d),
            (None, None) => Some(self.task.default_degradation()),
            (Some(_), None) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: String| Err(Error::Config { key: format!("data.{k}"), msg: m });
        if let Some(d) = &self.synth {
            d.validate()?;
            if (d.out_channels() == 6) != (self.task == Task::DeblurDp) {
                return bad("synth", format!("{d:?} does not fit task {:?}", self.task));
            }
        }
        if self.root.is_none() && (self.scenes == 0 || self.scene_size == 0) {
            return bad("scenes", "synthetic data needs scenes > 0 and scene_size > 0".into());
        }
        if let Some(root) = &self.root {
            if !root.join("clean").is_dir() {
                return bad("root", format!("{} has no clean/ directory", root.display()));
            }
        }
        Ok(())
    }
}

fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() && is_image_path(&path) {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.insert(stem, path);
        }
    }
    Ok(out)
}

/// Load the clean images under `<root>/clean` and their paired degraded inputs.
pub fn load_pairs(root: &Path, task: Task) -> Result<Vec<(String, ImagePair)>> {
    let clean = list_images(&root.join("clean"))?;
    let degraded_dir = root.join("degraded");
    let degraded = if degraded_dir.is_dir() {
        list_images(&degraded_dir)?
    } else {
        BTreeMap::new()
    };
    let mut pairs = Vec::with_capacity(clean.len());
    for (stem, path) in &clean {
        let c = load_image(path)?;
        let find = |s: &str| {
            degraded
                .get(s)
                .ok_or_else(|| Error::Invalid(format!("no degraded counterpart `{s}` for {}", path.display())))
        };
        let d = if task == Task::DeblurDp {
            dual_pixel_concat(&load_image(find(&format!("{stem}_L"))?)?, &load_image(find(&format!("{stem}_R"))?)?)?
        } else {
            load_image(find(stem)?)?
        };
        pairs.push((stem.clone(), ImagePair::new(d, c)?));
    }
    if pairs.is_empty() {
        return Err(Error::Invalid(format!("no images in {}", root.join("clean").display())));
    }
    Ok(pairs)
}

/// Seed for synthesising the degraded version of image `index` at construction time.
fn image_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64 + 1)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<ImagePair>,
    pub val: Vec<ImagePair>,
    pub names: Vec<String>,
    /// Pointwise degradation re-drawn for every training patch.
    pub online: Option<Degradation>,
}

impl Dataset {
    pub fn from_spec(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let degradation = spec.degradation();
        let mut named: Vec<(String, ImagePair)> = match &spec.root {
            Some(root) if degradation.is_none() => load_pairs(root, spec.task)?,
            Some(root) => list_images(&root.join("clean"))?
                .into_iter()
                .map(|(s, p)| {
                    let c = load_image(&p)?;
                    Ok((s, ImagePair::new(c.clone(), c)?))
                })
                .collect::<Result<_>>()?,
            None => (0..spec.scenes)
                .map(|i| {
                    let c = synthetic_scene(spec.scene_size, spec.scene_size, image_seed(spec.seed, i));
                    Ok((format!("scene{i:03}"), ImagePair::new(c.clone(), c)?))
                })
                .collect::<Result<_>>()?,
        };
        if spec.val_count >= named.len() {
            return Err(Error::Config {
                key: "data.val_count".into(),
                msg: format!("{} held out of {} images leaves nothing to train on", spec.val_count, named.len()),
            });
        }
        if let Some(d) = degradation {
            for (i, (_, pair)) in named.iter_mut().enumerate() {
                pair.degraded = d.apply(&pair.clean, image_seed(spec.seed ^ 0x5555, i))?;
            }
        }
        let split = named.len() - spec.val_count;
        let names = named.iter().map(|(n, _)| n.clone()).collect();
        let val = named.split_off(split).into_iter().map(|(_, p)| p).collect();
        let train = named.into_iter().map(|(_, p)| p).collect();
        Ok(Dataset {
            train,
            val,
            names,
            online: degradation.filter(Degradation::is_pointwise),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.train[0].degraded.shape()[1]
    }

    /// A training batch of `[batch, C, ps, ps]` degraded and clean tensors.
    pub fn sample_batch(&self, batch: usize, ps: usize, flips: bool, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
        if self.train.is_empty() {
            return Err(Error::Invalid("empty training set".into()));
        }
        let mut degraded = Vec::with_capacity(batch);
        let mut clean = Vec::with_capacity(batch);
        for _ in 0..batch {
            let idx = rng.random_range(0..self.train.len());
            let mut p = sample_patch(&self.train[idx], ps, rng)?;
            if flips {
                p = flip_augment(p, rng)?;
            }
            if let Some(d) = &self.online {
                p.degraded = d.apply(&p.clean, rng.next_u64())?;
            }
            degraded.push(p.degraded);
            clean.push(p.clean);
        }
        Ok((stack(&degraded)?, stack(&clean)?))
    }
}

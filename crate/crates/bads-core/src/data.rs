//! Deterministic generators for the three synthetic scenarios.
//!
//! Each scenario yields a large, deliberately flawed train split (imbalanced,
//! label-noisy, or domain-mixed), a small clean balanced meta split matching
//! the test distribution, a large balanced test split, and per-example group
//! tags (majority/minority, clean/noisy, aligned/off) so weight trajectories
//! can be evaluated against ground truth. Splits are serialized as a CSV
//! bundle, one file per split.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Default feature dimension; raised to the class count when axis-aligned
/// class means need more room.
pub const DEFAULT_DIM: usize = 8;
/// Default class-mean separation, in units of the within-class deviation.
pub const DEFAULT_SEPARATION: f64 = 4.0;
/// Meta examples drawn per meta domain in the domain-mixture scenario.
pub const DOMAIN_META_PER_DOMAIN: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub ids: Vec<u64>,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub tags: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.ids.len();
        if self.features.rows() != n || self.labels.len() != n || self.tags.len() != n {
            return Err(CoreError::Validation("split field lengths disagree".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub train: Split,
    pub meta: Split,
    pub test: Split,
    pub num_classes: usize,
    /// Tag id -> human-readable group name.
    pub tag_legend: Vec<String>,
}

impl Scenario {
    pub fn feature_dim(&self) -> usize {
        self.train.features.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Symmetric,
    Asymmetric,
}

impl std::str::FromStr for NoiseMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(NoiseMode::Symmetric),
            "asymmetric" => Ok(NoiseMode::Asymmetric),
            other => Err(CoreError::Validation(format!("unknown noise mode `{other}`"))),
        }
    }
}

struct SplitBuilder {
    dim: usize,
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
    tags: Vec<usize>,
}

impl SplitBuilder {
    fn new(dim: usize) -> Self {
        SplitBuilder {
            dim,
            rows: Vec::new(),
            labels: Vec::new(),
            tags: Vec::new(),
        }
    }

    /// Adds one point at `mean` plus isotropic unit Gaussian noise.
    fn push_gaussian(&mut self, mean: &[f64], label: usize, tag: usize, rng: &mut Rng) {
        debug_assert_eq!(mean.len(), self.dim);
        let row: Vec<f64> = mean.iter().map(|&m| m + rng.standard_normal()).collect();
        self.rows.push(row);
        self.labels.push(label);
        self.tags.push(tag);
    }

    fn build(self, next_id: &mut u64) -> Result<Split> {
        let n = self.rows.len();
        let ids: Vec<u64> = (0..n as u64).map(|i| *next_id + i).collect();
        *next_id += n as u64;
        Ok(Split {
            ids,
            features: Matrix::from_rows(&self.rows)?,
            labels: self.labels,
            tags: self.tags,
        })
    }
}

fn axis_mean(dim: usize, axis: usize, value: f64) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    m[axis] = value;
    m
}

pub const TAG_MAJORITY: usize = 0;
pub const TAG_MINORITY: usize = 1;

/// Two Gaussian blobs with an n_major : n_minor train split, a balanced meta
/// split, and a large balanced test split. Class 0 is the majority class;
/// both carry minority/majority tags in every split.
pub fn gen_imbalanced(
    seed: u64,
    n_major: usize,
    n_minor: usize,
    n_meta_per_class: usize,
    separation: f64,
) -> Result<Scenario> {
    if n_major < 1 || n_minor < 1 || n_meta_per_class < 1 {
        return Err(CoreError::Validation(
            "imbalanced scenario needs at least one example per group".into(),
        ));
    }
    if !(separation > 0.0) {
        return Err(CoreError::Validation("separation must be > 0".into()));
    }
    let dim = DEFAULT_DIM;
    let half = separation / 2.0;
    let means = [axis_mean(dim, 0, -half), axis_mean(dim, 0, half)];
    let tag_of = |label: usize| if label == 1 { TAG_MINORITY } else { TAG_MAJORITY };

    let root = Rng::new(seed);
    let mut next_id = 0u64;

    let mut train = SplitBuilder::new(dim);
    {
        let mut rng = root.substream(1);
        for _ in 0..n_major {
            train.push_gaussian(&means[0], 0, TAG_MAJORITY, &mut rng);
        }
        for _ in 0..n_minor {
            train.push_gaussian(&means[1], 1, TAG_MINORITY, &mut rng);
        }
    }

    let mut meta = SplitBuilder::new(dim);
    {
        let mut rng = root.substream(2);
        for class in 0..2 {
            for _ in 0..n_meta_per_class {
                meta.push_gaussian(&means[class], class, tag_of(class), &mut rng);
            }
        }
    }

    let mut test = SplitBuilder::new(dim);
    {
        let mut rng = root.substream(3);
        for class in 0..2 {
            for _ in 0..1000 {
                test.push_gaussian(&means[class], class, tag_of(class), &mut rng);
            }
        }
    }

    Ok(Scenario {
        train: train.build(&mut next_id)?,
        meta: meta.build(&mut next_id)?,
        test: test.build(&mut next_id)?,
        num_classes: 2,
        tag_legend: vec!["majority".into(), "minority".into()],
    })
}

pub const TAG_CLEAN: usize = 0;
pub const TAG_NOISY: usize = 1;

/// Class-conditional Gaussians with a `noise_rate` fraction of train labels
/// flipped. Symmetric mode flips uniformly to one of the other classes;
/// asymmetric mode flips to the next class cyclically. Meta and test stay
/// clean; tags record the clean/noisy ground truth.
pub fn gen_label_noise(
    seed: u64,
    n_train: usize,
    num_classes: usize,
    noise_rate: f64,
    mode: NoiseMode,
) -> Result<Scenario> {
    gen_label_noise_with(seed, n_train, num_classes, noise_rate, mode, DEFAULT_SEPARATION)
}

/// As `gen_label_noise`, with an explicit class-mean separation.
pub fn gen_label_noise_with(
    seed: u64,
    n_train: usize,
    num_classes: usize,
    noise_rate: f64,
    mode: NoiseMode,
    separation: f64,
) -> Result<Scenario> {
    if num_classes < 2 {
        return Err(CoreError::Validation("need at least two classes".into()));
    }
    if n_train < 1 {
        return Err(CoreError::Validation("need at least one train example".into()));
    }
    if !(0.0..1.0).contains(&noise_rate) {
        return Err(CoreError::Validation("noise_rate must be in [0, 1)".into()));
    }
    if !(separation > 0.0) {
        return Err(CoreError::Validation("separation must be > 0".into()));
    }
    let dim = DEFAULT_DIM.max(num_classes);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|k| axis_mean(dim, k, separation))
        .collect();
    let n_meta_per_class = 10;
    let n_test_per_class = 100;

    let root = Rng::new(seed);
    let mut next_id = 0u64;

    let mut train = SplitBuilder::new(dim);
    let true_labels: Vec<usize>;
    {
        let mut rng = root.substream(1);
        true_labels = (0..n_train).map(|_| rng.below(num_classes)).collect();
        for &class in &true_labels {
            train.push_gaussian(&means[class], class, TAG_CLEAN, &mut rng);
        }
        // Flip exactly floor(noise_rate * n_train) labels.
        let n_flip = (noise_rate * n_train as f64).floor() as usize;
        let mut order: Vec<usize> = (0..n_train).collect();
        rng.shuffle(&mut order);
        for &i in order.iter().take(n_flip) {
            let from = train.labels[i];
            let to = match mode {
                NoiseMode::Symmetric => {
                    // Uniform over the other classes.
                    let pick = rng.below(num_classes - 1);
                    if pick >= from {
                        pick + 1
                    } else {
                        pick
                    }
                }
                NoiseMode::Asymmetric => (from + 1) % num_classes,
            };
            train.labels[i] = to;
            train.tags[i] = TAG_NOISY;
        }
    }

    let mut meta = SplitBuilder::new(dim);
    {
        let mut rng = root.substream(2);
        for class in 0..num_classes {
            for _ in 0..n_meta_per_class {
                meta.push_gaussian(&means[class], class, TAG_CLEAN, &mut rng);
            }
        }
    }

    let mut test = SplitBuilder::new(dim);
    {
        let mut rng = root.substream(3);
        for class in 0..num_classes {
            for _ in 0..n_test_per_class {
                test.push_gaussian(&means[class], class, TAG_CLEAN, &mut rng);
            }
        }
    }

    Ok(Scenario {
        train: train.build(&mut next_id)?,
        meta: meta.build(&mut next_id)?,
        test: test.build(&mut next_id)?,
        num_classes,
        tag_legend: vec!["clean".into(), "noisy".into()],
    })
}

pub const TAG_ALIGNED: usize = 0;
pub const TAG_OFF: usize = 1;

/// Binary-labeled cluster families. Meta and test come from target domains
/// whose classes separate along one direction; the train split mixes one
/// aligned domain (same discriminative direction, shifted cluster center)
/// with off domains whose discriminative direction is rotated away from the
/// target's. Tags record aligned/off domain membership.
pub fn gen_domain_mixture(
    seed: u64,
    domains_train: usize,
    domains_meta: usize,
    n_per_domain: usize,
) -> Result<Scenario> {
    gen_domain_mixture_rotated(
        seed,
        domains_train,
        domains_meta,
        n_per_domain,
        std::f64::consts::FRAC_PI_2,
    )
}

/// As `gen_domain_mixture` with an explicit rotation (radians) between the
/// target's discriminative direction and the off domains'. Rotation 0 is the
/// degenerate control where aligned and off domains coincide.
pub fn gen_domain_mixture_rotated(
    seed: u64,
    domains_train: usize,
    domains_meta: usize,
    n_per_domain: usize,
    rotation: f64,
) -> Result<Scenario> {
    if domains_train < 2 {
        return Err(CoreError::Validation("need at least two train domains".into()));
    }
    if domains_meta < 1 {
        return Err(CoreError::Validation("need at least one meta domain".into()));
    }
    if n_per_domain < 2 {
        return Err(CoreError::Validation("need at least two examples per domain".into()));
    }
    let dim = DEFAULT_DIM;
    if domains_meta > dim - 3 {
        return Err(CoreError::Validation(format!(
            "at most {} meta domains fit the feature space",
            dim - 3
        )));
    }
    let separation = DEFAULT_SEPARATION;
    let half = separation / 2.0;
    let offset_scale = 3.0;
    // Target classes separate along axis 0; off-domain classes along a
    // direction rotated into axis 1. Cluster centers sit on later axes.
    let target_dir = axis_mean(dim, 0, 1.0);
    let mut off_dir = vec![0.0; dim];
    off_dir[0] = rotation.cos();
    off_dir[1] = rotation.sin();
    let train_offset = axis_mean(dim, 2, -offset_scale);
    let meta_offset = |m: usize| axis_mean(dim, 3 + m, offset_scale);

    let class_mean = |offset: &[f64], dir: &[f64], class: usize| -> Vec<f64> {
        let sign = if class == 1 { half } else { -half };
        offset.iter().zip(dir).map(|(o, d)| o + sign * d).collect()
    };

    let root = Rng::new(seed);
    let mut next_id = 0u64;

    let mut train = SplitBuilder::new(dim);
    {
        let mut rng = root.substream(1);
        for domain in 0..domains_train {
            let (dir, tag) = if domain == 0 {
                (&target_dir, TAG_ALIGNED)
            } else {
                (&off_dir, TAG_OFF)
            };
            for i in 0..n_per_domain {
                let class = i % 2;
                train.push_gaussian(&class_mean(&train_offset, dir, class), class, tag, &mut rng);
            }
        }
    }

    let mut meta = SplitBuilder::new(dim);
    {
        let mut rng = root.substream(2);
        for m in 0..domains_meta {
            let offset = meta_offset(m);
            for i in 0..DOMAIN_META_PER_DOMAIN {
                let class = i % 2;
                meta.push_gaussian(&class_mean(&offset, &target_dir, class), class, TAG_ALIGNED, &mut rng);
            }
        }
    }

    let mut test = SplitBuilder::new(dim);
    {
        let mut rng = root.substream(3);
        for m in 0..domains_meta {
            let offset = meta_offset(m);
            for i in 0..200 {
                let class = i % 2;
                test.push_gaussian(&class_mean(&offset, &target_dir, class), class, TAG_ALIGNED, &mut rng);
            }
        }
    }

    Ok(Scenario {
        train: train.build(&mut next_id)?,
        meta: meta.build(&mut next_id)?,
        test: test.build(&mut next_id)?,
        num_classes: 2,
        tag_legend: vec!["aligned".into(), "off".into()],
    })
}

// --- CSV bundle -----------------------------------------------------------
//
// One file per split (train.csv, meta.csv, test.csv) with a header row:
// id,tag,label,f0,...,f{d-1}. A legend.csv maps tag ids to names. UTF-8,
// LF line endings. Floats are written in shortest round-trip form.

fn write_split(path: &Path, split: &Split) -> Result<()> {
    split.check()?;
    let mut out = String::new();
    out.push_str("id,tag,label");
    for c in 0..split.features.cols() {
        out.push_str(&format!(",f{c}"));
    }
    out.push('\n');
    for i in 0..split.len() {
        out.push_str(&format!("{},{},{}", split.ids[i], split.tags[i], split.labels[i]));
        for &v in split.features.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

fn read_split(path: &Path) -> Result<Split> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::Parse(format!("{}: empty file", path.display())))?;
    let dim = header.split(',').count().saturating_sub(3);
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut tags = Vec::new();
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(CoreError::Parse(format!(
                "{}: line {} has {} fields, expected {}",
                path.display(),
                ln + 2,
                fields.len(),
                dim + 3
            )));
        }
        let bad = |what: &str| CoreError::Parse(format!("{}: line {}: bad {what}", path.display(), ln + 2));
        ids.push(fields[0].parse::<u64>().map_err(|_| bad("id"))?);
        tags.push(fields[1].parse::<usize>().map_err(|_| bad("tag"))?);
        labels.push(fields[2].parse::<usize>().map_err(|_| bad("label"))?);
        let row: std::result::Result<Vec<f64>, _> = fields[3..].iter().map(|s| s.parse::<f64>()).collect();
        rows.push(row.map_err(|_| bad("feature"))?);
    }
    Ok(Split {
        ids,
        features: Matrix::from_rows(&rows)?,
        labels,
        tags,
    })
}

/// Writes the scenario as a CSV bundle into `dir`.
pub fn save_scenario(scenario: &Scenario, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_split(&dir.join("train.csv"), &scenario.train)?;
    write_split(&dir.join("meta.csv"), &scenario.meta)?;
    write_split(&dir.join("test.csv"), &scenario.test)?;
    let mut legend = String::from("tag,name\n");
    for (i, name) in scenario.tag_legend.iter().enumerate() {
        legend.push_str(&format!("{i},{name}\n"));
    }
    fs::write(dir.join("legend.csv"), legend)?;
    Ok(())
}

/// Reads a CSV bundle written by `save_scenario`.
pub fn load_scenario(dir: &Path) -> Result<Scenario> {
    let train = read_split(&dir.join("train.csv"))?;
    let meta = read_split(&dir.join("meta.csv"))?;
    let test = read_split(&dir.join("test.csv"))?;
    let legend_text = fs::read_to_string(dir.join("legend.csv"))?;
    let mut tag_legend = Vec::new();
    for line in legend_text.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let (tag, name) = line
            .split_once(',')
            .ok_or_else(|| CoreError::Parse("legend.csv: missing comma".into()))?;
        let tag: usize = tag
            .parse()
            .map_err(|_| CoreError::Parse("legend.csv: bad tag id".into()))?;
        if tag != tag_legend.len() {
            return Err(CoreError::Parse("legend.csv: tags out of order".into()));
        }
        tag_legend.push(name.to_string());
    }
    let num_classes = train
        .labels
        .iter()
        .chain(&meta.labels)
        .chain(&test.labels)
        .max()
        .map_or(0, |&m| m + 1);
    Ok(Scenario {
        train,
        meta,
        test,
        num_classes,
        tag_legend,
    })
}

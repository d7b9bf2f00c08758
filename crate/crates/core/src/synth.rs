//! Synthetic corpus with known ground truth.
//!
//! Three parts mirror the label regimes the library is built for: a
//! crowd-rated MOS-only part, a part rated on OVR/SIG/BAK, and a part with
//! directly measured acoustic labels (T60 in seconds, C50 in dB). Latent
//! scores are fixed smooth functions of Gaussian features. Raters add their
//! own slope, offset and noise before the score is clamped to 1–5 and
//! rounded.
//!
//! Task functions, with unit directions `u_*` drawn from `task_seed` and
//! `g = task_gain`:
//!
//! ```text
//! SIG      = 3 + 2 tanh(g · x·normalize(u_sig − 0.3 u_room))
//! BAK      = 3 + 2 tanh(g · x·u_bak)
//! OVR, MOS = 3 + 2 tanh(g · x·normalize(0.6 u_sig + 0.6 u_bak − 0.4 u_room))
//! T60      = lo + (hi − lo) · sigmoid(2g · x·u_room)
//! C50      = lo + (hi − lo) · sigmoid(−2g · x·normalize(0.8 u_room + 0.6 u_clar))
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::dataset::{
    aggregate_mos_for, load_dataset, load_ratings, save_dataset, save_ratings, Dataset,
    RatingRecord, RatingTable, TaskId,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, stream};

const PART_MOS: u64 = 1;
const PART_OSB: u64 = 2;
const PART_ACOUSTIC: u64 = 3;
const RATER_STREAM: u64 = 10;
const TEST_STREAM: u64 = 20;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Seed of the task functions; kept apart so train and test splits
    /// share them.
    pub task_seed: u64,
    pub dim: usize,
    pub n_mos: usize,
    pub n_ovr_sig_bak: usize,
    pub n_t60_c50: usize,
    /// Size of the test split relative to each training part.
    pub test_fraction: f64,
    pub task_gain: f64,
    pub raters: usize,
    pub raters_per_sample: usize,
    pub bias_mean: f64,
    pub bias_spread: f64,
    pub slope_mean: f64,
    pub slope_spread: f64,
    pub rating_noise: f64,
    pub label_noise: f64,
    pub t60_range: [f64; 2],
    pub c50_range: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task_seed: 7,
            dim: 16,
            n_mos: 5000,
            n_ovr_sig_bak: 2000,
            n_t60_c50: 5000,
            test_fraction: 0.2,
            task_gain: 0.8,
            raters: 500,
            raters_per_sample: 10,
            bias_mean: 0.0,
            bias_spread: 0.5,
            slope_mean: 1.0,
            slope_spread: 0.1,
            rating_noise: 0.3,
            label_noise: 0.1,
            t60_range: [0.2, 2.0],
            c50_range: [-5.0, 15.0],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim == 0 {
            return bad("synth dim must be at least 1".into());
        }
        for (name, n) in [
            ("n_mos", self.n_mos),
            ("n_ovr_sig_bak", self.n_ovr_sig_bak),
            ("n_t60_c50", self.n_t60_c50),
        ] {
            if n == 0 {
                return bad(format!("synth {name} must be at least 1"));
            }
        }
        if self.raters_per_sample == 0 || self.raters_per_sample > self.raters {
            return bad(format!(
                "synth raters_per_sample ({}) must lie in 1..=raters ({})",
                self.raters_per_sample, self.raters
            ));
        }
        for (name, v) in [
            ("bias_spread", self.bias_spread),
            ("slope_spread", self.slope_spread),
            ("rating_noise", self.rating_noise),
            ("label_noise", self.label_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("synth {name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("bias_mean", self.bias_mean),
            ("slope_mean", self.slope_mean),
            ("task_gain", self.task_gain),
        ] {
            if !v.is_finite() {
                return bad(format!("synth {name} must be finite"));
            }
        }
        if !(0.0..=10.0).contains(&self.test_fraction) {
            return bad(format!("synth test_fraction must lie in [0, 10], got {}", self.test_fraction));
        }
        let [lo, hi] = self.t60_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad("synth t60_range must satisfy 0 < lo < hi".into());
        }
        let [lo, hi] = self.c50_range;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return bad("synth c50_range must satisfy lo < hi".into());
        }
        Ok(())
    }
}

/// True parameters of one simulated rater.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueRater {
    pub rater_id: String,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub mos: Dataset,
    pub ovr_sig_bak: Dataset,
    pub t60_c50: Dataset,
    pub ratings: RatingTable,
    /// Noise-free score of every sample on every task.
    pub latent: BTreeMap<(String, TaskId), f64>,
    pub raters: Vec<TrueRater>,
}

impl SynthCorpus {
    pub fn parts(&self) -> [&Dataset; 3] {
        [&self.mos, &self.ovr_sig_bak, &self.t60_c50]
    }

    pub fn latent(&self, sample: &str, task: &TaskId) -> Option<f64> {
        self.latent.get(&(sample.to_string(), task.clone())).copied()
    }
}

pub const ALL_TASKS: [TaskId; 6] = [
    TaskId::Mos,
    TaskId::Ovr,
    TaskId::Sig,
    TaskId::Bak,
    TaskId::T60,
    TaskId::C50,
];

struct TaskFunctions {
    sig: Vec<f64>,
    bak: Vec<f64>,
    ovr: Vec<f64>,
    room: Vec<f64>,
    clarity: Vec<f64>,
    gain: f64,
    t60: [f64; 2],
    c50: [f64; 2],
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn combine(terms: &[(f64, &[f64])]) -> Vec<f64> {
    let d = terms[0].1.len();
    unit((0..d).map(|i| terms.iter().map(|(w, v)| w * v[i]).sum()).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl TaskFunctions {
    fn new(config: &SynthConfig) -> Self {
        let mut rng = stream(config.task_seed, &[]);
        let mut draw = || unit((0..config.dim).map(|_| rng.sample(StandardNormal)).collect());
        let (u_sig, u_bak, u_room, u_clar) = (draw(), draw(), draw(), draw());
        Self {
            sig: combine(&[(1.0, &u_sig), (-0.3, &u_room)]),
            ovr: combine(&[(0.6, &u_sig), (0.6, &u_bak), (-0.4, &u_room)]),
            clarity: combine(&[(0.8, &u_room), (0.6, &u_clar)]),
            bak: u_bak,
            room: u_room,
            gain: config.task_gain,
            t60: config.t60_range,
            c50: config.c50_range,
        }
    }

    fn eval(&self, task: &TaskId, x: &[f64]) -> f64 {
        let g = self.gain;
        let quality = |u: &[f64]| 3.0 + 2.0 * (g * dot(x, u)).tanh();
        let span = |[lo, hi]: [f64; 2], z: f64| lo + (hi - lo) * sigmoid(z);
        match task {
            TaskId::Mos | TaskId::Ovr => quality(&self.ovr),
            TaskId::Sig => quality(&self.sig),
            TaskId::Bak => quality(&self.bak),
            TaskId::T60 => span(self.t60, 2.0 * g * dot(x, &self.room)),
            TaskId::C50 => span(self.c50, -2.0 * g * dot(x, &self.clarity)),
            TaskId::Other(_) => unreachable!("synthetic corpus only uses built-in tasks"),
        }
    }
}

/// Integer rating of `latent` by a rater with slope `a` and offset `b`.
pub fn simulate_rating(latent: f64, a: f64, b: f64, noise: f64) -> f64 {
    (a * latent + b + noise).clamp(1.0, 5.0).round()
}

struct GeneratedSample {
    id: String,
    features: Vec<f64>,
    latent: Vec<(TaskId, f64)>,
    ratings: Vec<RatingRecord>,
    direct: Vec<f64>,
}

struct Generator<'a> {
    config: &'a SynthConfig,
    functions: TaskFunctions,
    raters: Vec<TrueRater>,
    seed: u64,
    prefix: &'a str,
}

impl Generator<'_> {
    fn sample(&self, part: u64, i: usize, name: &str, rated: &[TaskId], direct: &[TaskId]) -> Result<GeneratedSample> {
        let c = self.config;
        let mut rng = stream(self.seed, &[part, i as u64]);
        let features: Vec<f64> = (0..c.dim).map(|_| rng.sample(StandardNormal)).collect();
        let latent: Vec<(TaskId, f64)> = ALL_TASKS
            .iter()
            .map(|t| (t.clone(), self.functions.eval(t, &features)))
            .collect();
        let value = |t: &TaskId| latent.iter().find(|(k, _)| k == t).map(|p| p.1).unwrap_or(f64::NAN);
        let id = format!("{}{name}-{i:06}", self.prefix);
        let rating_noise = normal(0.0, c.rating_noise)?;
        let mut chosen = index::sample(&mut rng, c.raters, c.raters_per_sample).into_vec();
        chosen.sort_unstable();
        let mut ratings = Vec::with_capacity(rated.len() * chosen.len());
        for task in rated {
            let l = value(task);
            for &j in &chosen {
                let r = &self.raters[j];
                ratings.push(RatingRecord {
                    sample_id: id.clone(),
                    rater_id: r.rater_id.clone(),
                    task: task.clone(),
                    value: simulate_rating(l, r.a, r.b, rating_noise.sample(&mut rng)),
                });
            }
        }
        let label_noise = normal(0.0, c.label_noise)?;
        let direct = direct
            .iter()
            .map(|task| {
                let [lo, hi] = if *task == TaskId::T60 { c.t60_range } else { c.c50_range };
                (value(task) + label_noise.sample(&mut rng)).clamp(lo, hi)
            })
            .collect();
        Ok(GeneratedSample {
            id,
            features,
            latent,
            ratings,
            direct,
        })
    }

    fn part(&self, part: u64, n: usize, name: &str, rated: &[TaskId], direct: &[TaskId]) -> Result<Vec<GeneratedSample>> {
        (0..n)
            .into_par_iter()
            .map(|i| self.sample(part, i, name, rated, direct))
            .collect()
    }
}

fn normal(mean: f64, sd: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sd).map_err(|e| Error::InvalidConfig(format!("normal({mean}, {sd}): {e}")))
}

fn rater_population(config: &SynthConfig) -> Result<Vec<TrueRater>> {
    let bias = normal(config.bias_mean, config.bias_spread)?;
    let slope = normal(config.slope_mean, config.slope_spread)?;
    Ok((0..config.raters)
        .map(|j| {
            let mut rng = stream(config.seed, &[RATER_STREAM, j as u64]);
            let a = slope.sample(&mut rng);
            let b = bias.sample(&mut rng);
            TrueRater {
                rater_id: format!("r{j:05}"),
                a,
                b,
            }
        })
        .collect())
}

fn build(config: &SynthConfig, sample_seed: u64, prefix: &str, sizes: [usize; 3]) -> Result<SynthCorpus> {
    config.validate()?;
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig("every corpus part needs at least one sample".into()));
    }
    let gen = Generator {
        config,
        functions: TaskFunctions::new(config),
        raters: rater_population(config)?,
        seed: sample_seed,
        prefix,
    };
    let osb = [TaskId::Ovr, TaskId::Sig, TaskId::Bak];
    let acoustic = [TaskId::T60, TaskId::C50];
    let parts = [
        gen.part(PART_MOS, sizes[0], "mos", &[TaskId::Mos], &[])?,
        gen.part(PART_OSB, sizes[1], "osb", &osb, &[])?,
        gen.part(PART_ACOUSTIC, sizes[2], "ac", &[], &acoustic)?,
    ];
    let records: Vec<RatingRecord> = parts.iter().flatten().flat_map(|s| s.ratings.iter().cloned()).collect();
    let ratings = RatingTable::from_records(records)?;
    let mut latent = BTreeMap::new();
    for s in parts.iter().flatten() {
        for (t, v) in &s.latent {
            latent.insert((s.id.clone(), t.clone()), *v);
        }
    }
    let rated_part = |samples: &[GeneratedSample], tasks: &[TaskId]| -> Result<Dataset> {
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        let mut labels = Matrix::zeros(ids.len(), tasks.len());
        for (c, task) in tasks.iter().enumerate() {
            let mos = aggregate_mos_for(&ratings, task, &ids)?;
            for (r, id) in ids.iter().enumerate() {
                labels.set(r, c, mos[id]);
            }
        }
        finish(samples, ids, labels, tasks, config.dim)
    };
    let mos = rated_part(&parts[0], &[TaskId::Mos])?;
    let ovr_sig_bak = rated_part(&parts[1], &osb)?;
    let ids: Vec<String> = parts[2].iter().map(|s| s.id.clone()).collect();
    let labels = Matrix::from_vec(ids.len(), 2, parts[2].iter().flat_map(|s| s.direct.iter().copied()).collect());
    let t60_c50 = finish(&parts[2], ids, labels, &acoustic, config.dim)?;
    Ok(SynthCorpus {
        config: config.clone(),
        mos,
        ovr_sig_bak,
        t60_c50,
        ratings,
        latent,
        raters: gen.raters,
    })
}

fn finish(samples: &[GeneratedSample], ids: Vec<String>, labels: Matrix, tasks: &[TaskId], dim: usize) -> Result<Dataset> {
    let features = Matrix::from_vec(ids.len(), dim, samples.iter().flat_map(|s| s.features.iter().copied()).collect());
    let cells = labels.rows() * labels.cols();
    Dataset::new(ids, features, labels, vec![true; cells], tasks.to_vec())
}

/// Generates the training corpus described by `config`.
pub fn gen_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    build(
        config,
        config.seed,
        "",
        [config.n_mos, config.n_ovr_sig_bak, config.n_t60_c50],
    )
}

/// Training corpus plus a test corpus with fresh samples, the same task
/// functions and the same rater population. Test ids start with `test-`.
pub fn gen_splits(config: &SynthConfig) -> Result<(SynthCorpus, SynthCorpus)> {
    let train = gen_corpus(config)?;
    let scale = |n: usize| ((n as f64 * config.test_fraction).round() as usize).max(1);
    let test = build(
        config,
        derive_seed(config.seed, &[TEST_STREAM]),
        "test-",
        [scale(config.n_mos), scale(config.n_ovr_sig_bak), scale(config.n_t60_c50)],
    )?;
    Ok((train, test))
}

/// Writes `mos/`, `ovr_sig_bak/`, `t60_c50/`, `ratings.csv`, `config.toml`
/// and the ground truth under `truth/`.
pub fn export_corpus(corpus: &SynthCorpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for (name, part) in [
        ("mos", &corpus.mos),
        ("ovr_sig_bak", &corpus.ovr_sig_bak),
        ("t60_c50", &corpus.t60_c50),
    ] {
        if part.is_empty() {
            return Err(Error::EmptyDataset);
        }
        save_dataset(part, dir.join(name))?;
    }
    save_ratings(&corpus.ratings, dir.join("ratings.csv"))?;
    let config = toml::to_string(&corpus.config).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    write(&dir.join("config.toml"), config)?;

    let truth = dir.join("truth");
    std::fs::create_dir_all(&truth).map_err(|e| Error::io(&truth, e))?;
    let mut latent = String::from("sample_id,task,latent\n");
    for ((s, t), v) in &corpus.latent {
        let _ = writeln!(latent, "{s},{t},{v:?}");
    }
    write(&truth.join("latent.csv"), latent)?;
    let mut raters = String::from("rater_id,a,b\n");
    for r in &corpus.raters {
        let _ = writeln!(raters, "{},{:?},{:?}", r.rater_id, r.a, r.b);
    }
    write(&truth.join("raters.csv"), raters)
}

fn write(path: &Path, content: String) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_rows(path: &Path, header: &str, width: usize) -> Result<Vec<(u64, Vec<String>)>> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => return Err(Error::parse(path, 1, format!("expected header '{header}'"))),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let cells: Vec<String> = l.split(',').map(str::to_string).collect();
            if cells.len() != width {
                return Err(Error::parse(path, i as u64 + 1, format!("expected {width} fields")));
            }
            Ok((i as u64 + 1, cells))
        })
        .collect()
}

fn number(path: &Path, line: u64, s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::parse(path, line, format!("invalid number '{s}'")))
}

/// Reads a directory written by [`export_corpus`].
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<SynthCorpus> {
    let dir = dir.as_ref();
    let cfg_path = dir.join("config.toml");
    let config: SynthConfig = toml::from_str(&read(&cfg_path)?)
        .map_err(|e| Error::parse(&cfg_path, 1, e.to_string()))?;
    let path = dir.join("truth/latent.csv");
    let mut latent = BTreeMap::new();
    for (line, cells) in csv_rows(&path, "sample_id,task,latent", 3)? {
        let task = cells[1].parse().map_err(|e: Error| Error::parse(&path, line, e.to_string()))?;
        latent.insert((cells[0].clone(), task), number(&path, line, &cells[2])?);
    }
    let path = dir.join("truth/raters.csv");
    let raters = csv_rows(&path, "rater_id,a,b", 3)?
        .into_iter()
        .map(|(line, cells)| {
            Ok(TrueRater {
                a: number(&path, line, &cells[1])?,
                b: number(&path, line, &cells[2])?,
                rater_id: cells[0].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthCorpus {
        config,
        mos: load_dataset(dir.join("mos"))?,
        ovr_sig_bak: load_dataset(dir.join("ovr_sig_bak"))?,
        t60_c50: load_dataset(dir.join("t60_c50"))?,
        ratings: load_ratings(dir.join("ratings.csv"))?,
        latent,
        raters,
    })
}

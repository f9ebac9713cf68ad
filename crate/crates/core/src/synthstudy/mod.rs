//! Synthetic patient studies: per-view embeddings from a linear-Gaussian
//! generator with hidden per-patient view quality.

mod io;
mod split;

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, Dataset, DATASET_MAGIC, DATASET_VERSION};
pub use split::{load_split, save_split, split_dataset, DatasetSplit};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probmodel::CategoryGrid;

/// Display names for the default five-view protocol.
pub const VIEW_NAMES: [&str; 5] = ["AP2", "AP3", "AP4", "PLAX", "PSAX-Ao"];

pub fn view_name(v: usize) -> String {
    VIEW_NAMES.get(v).map_or_else(|| format!("V{v}"), |s| (*s).to_string())
}

/// EF sampling support per category: `[lo, lo + width]`.
const EF_SUPPORT: [(f64, f64); 3] = [(0.15, 0.25), (0.40, 0.10), (0.50, 0.25)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_views: usize,
    pub embed_dim: usize,
    pub n_patients: usize,
    /// `(w_as, w_ef)` per view.
    pub view_signal: Vec<(f64, f64)>,
    pub quality_spread: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub as_prevalence: Vec<f64>,
    pub ef_prevalence: Vec<f64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_views: 5,
            embed_dim: 32,
            n_patients: 5000,
            // AP2, AP3, AP4, PLAX, PSAX-Ao
            view_signal: vec![(0.05, 0.3), (0.6, 0.6), (0.0, 0.8), (0.3, 0.05), (0.8, 0.0)],
            quality_spread: 0.3,
            noise_std: 0.3,
            seed: 0,
            as_prevalence: vec![0.4, 0.3, 0.3],
            ef_prevalence: vec![0.3, 0.3, 0.4],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_views < 2 {
            return bad(format!("n_views must be >= 2, got {}", self.n_views));
        }
        if self.embed_dim < 2 {
            return bad(format!("embed_dim must be >= 2, got {}", self.embed_dim));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be > 0, got {}", self.noise_std));
        }
        if !(self.quality_spread >= 0.0 && self.quality_spread.is_finite()) {
            return bad(format!("quality_spread must be >= 0, got {}", self.quality_spread));
        }
        if self.view_signal.len() != self.n_views {
            return bad(format!("view_signal has {} entries for {} views", self.view_signal.len(), self.n_views));
        }
        if self.view_signal.iter().any(|&(a, e)| !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&e)) {
            return bad("view_signal weights must lie in [0, 1]".into());
        }
        if !self.view_signal.iter().any(|s| s.0 > 0.0) || !self.view_signal.iter().any(|s| s.1 > 0.0) {
            return bad("at least one view must carry AS signal and one EF signal".into());
        }
        for (name, p, len) in
            [("as_prevalence", &self.as_prevalence, 3), ("ef_prevalence", &self.ef_prevalence, EF_SUPPORT.len())]
        {
            let s: f64 = p.iter().sum();
            if p.len() != len || p.iter().any(|&x| x.is_nan() || x < 0.0) || (s - 1.0).abs() > 1e-9 {
                return bad(format!("{name} must be {len} non-negative weights summing to 1"));
            }
        }
        Ok(())
    }

    pub fn n_as_classes(&self) -> usize {
        self.as_prevalence.len()
    }

    /// Mean and second moment of `(y_as, y_ef)` under the label prior.
    /// The two latents are independent, so the prior covariance is diagonal.
    pub fn prior_moments(&self) -> ([f64; 2], [f64; 2]) {
        // Beta(2,2) on [lo, lo + w]: mean lo + w/2, variance w^2/20
        let moments = |parts: &mut dyn Iterator<Item = (f64, f64, f64)>| {
            let (mut m1, mut m2) = (0.0, 0.0);
            for (p, lo, w) in parts {
                let mean = lo + 0.5 * w;
                m1 += p * mean;
                m2 += p * (mean * mean + w * w / 20.0);
            }
            (m1, m2 - m1 * m1)
        };
        let k = self.n_as_classes() as f64;
        let (ma, va) = moments(&mut self.as_prevalence.iter().enumerate().map(|(c, &p)| (p, c as f64 / k, 1.0 / k)));
        let (me, ve) = moments(&mut self.ef_prevalence.iter().zip(EF_SUPPORT).map(|(&p, (lo, w))| (p, lo, w)));
        ([ma, me], [va, ve])
    }
}

/// One patient: N view embeddings plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRecord {
    pub study_id: u64,
    pub n_views: usize,
    pub embed_dim: usize,
    /// Row-major `n_views x embed_dim`.
    pub embeddings: Vec<f64>,
    pub y_as_value: f64,
    pub y_as_class: usize,
    pub y_ef: f64,
    /// Generative view quality; only oracles should read this.
    pub qualities: Vec<f64>,
}

impl StudyRecord {
    pub fn view(&self, v: usize) -> &[f64] {
        &self.embeddings[v * self.embed_dim..(v + 1) * self.embed_dim]
    }

    pub fn ef_category(&self) -> usize {
        CategoryGrid::default().ef_category(self.y_ef)
    }
}

/// The seeded view directions shared by every study of one config.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    /// Unit AS direction per view.
    pub a: Vec<Vec<f64>>,
    /// Unit EF direction per view, orthogonal to the AS direction of the same view.
    pub b: Vec<Vec<f64>>,
}

impl World {
    pub fn new(cfg: &GeneratorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.embed_dim;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| normal.sample(rng)).collect() };
        let mut a = Vec::with_capacity(cfg.n_views);
        let mut b = Vec::with_capacity(cfg.n_views);
        for _ in 0..cfg.n_views {
            let av = unit(draw(&mut rng));
            let mut bv = draw(&mut rng);
            let proj = dot(&av, &bv);
            bv.iter_mut().zip(&av).for_each(|(x, y)| *x -= proj * y);
            a.push(av);
            b.push(unit(bv));
        }
        Self { a, b }
    }
}

/// Maps a label in [0,1] to the signed amplitude placed along its direction.
pub fn signal_map(y: f64) -> f64 {
    2.0 * y - 1.0
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn study_rng(seed: u64, study_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // stream 0 belongs to the world directions
    rng.set_stream(study_id + 1);
    rng
}

fn pick(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn generate_study(cfg: &GeneratorConfig, world: &World, study_id: u64) -> StudyRecord {
    let mut rng = study_rng(cfg.seed, study_id);
    let beta = Beta::new(2.0, 2.0).expect("valid beta");
    let k = cfg.n_as_classes();
    let c = pick(&mut rng, &cfg.as_prevalence);
    let y_as_value = (c as f64 + beta.sample(&mut rng)) / k as f64;
    let e = pick(&mut rng, &cfg.ef_prevalence);
    let (lo, w) = EF_SUPPORT[e];
    let y_ef = lo + w * beta.sample(&mut rng);

    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (d, n) = (cfg.embed_dim, cfg.n_views);
    let mut qualities = Vec::with_capacity(n);
    let mut embeddings = Vec::with_capacity(n * d);
    let (ga, ge) = (signal_map(y_as_value), signal_map(y_ef));
    for v in 0..n {
        let q = (1.0 + cfg.quality_spread * unit_normal.sample(&mut rng)).clamp(0.0, 2.0);
        qualities.push(q);
        let (wa, we) = cfg.view_signal[v];
        for j in 0..d {
            let signal = q * (wa * world.a[v][j] * ga + we * world.b[v][j] * ge);
            embeddings.push(signal + cfg.noise_std * unit_normal.sample(&mut rng));
        }
    }
    StudyRecord {
        study_id,
        n_views: n,
        embed_dim: d,
        embeddings,
        y_as_value,
        y_as_class: ((y_as_value * k as f64) as usize).min(k - 1),
        y_ef,
        qualities,
    }
}

/// Generates `cfg.n_patients` studies with ids `0..n`. Each study draws from
/// its own ChaCha stream, so output does not depend on generation order.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Vec<StudyRecord>> {
    cfg.validate()?;
    let world = World::new(cfg);
    Ok((0..cfg.n_patients as u64).map(|i| generate_study(cfg, &world, i)).collect())
}

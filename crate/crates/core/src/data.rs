//! Bags of instance vectors: a synthetic generator with ground-truth roles,
//! and on-disk datasets (CSV feature files indexed by a JSON manifest).
//!
//! Manifest layout, all paths relative to the manifest's directory:
//!
//! ```json
//! {
//!   "version": 1,
//!   "classes": 3,
//!   "bags": [
//!     { "id": "bag0000", "features": "bags/bag0000.csv", "label": 0,
//!       "pkis": "bags/bag0000.pki.csv", "roles": "bags/bag0000.roles.csv" }
//!   ]
//! }
//! ```
//!
//! Feature files hold one instance per row, comma-separated, no header.
//! Role files hold one of `TI`, `NTI`, `BGI` per line.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::proxy::Role;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    /// Raw (pre-encoder) instance vectors, one per row.
    pub instances: Matrix,
    pub label: usize,
    pub true_roles: Option<Vec<Role>>,
    pub pkis: Matrix,
}

impl Bag {
    pub fn validate(&self, classes: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::contract(msg).in_bag(&self.id));
        if self.instances.nrows() < 3 {
            return fail(format!("needs at least 3 instances, has {}", self.instances.nrows()));
        }
        if self.pkis.nrows() < 1 {
            return Err(Error::MissingPrior.in_bag(&self.id));
        }
        if self.pkis.ncols() != self.instances.ncols() {
            return fail(format!(
                "prior instances have dimension {}, instances {}",
                self.pkis.ncols(),
                self.instances.ncols()
            ));
        }
        if self.label >= classes {
            return fail(format!("label {} outside {classes} classes", self.label));
        }
        if let Some(roles) = &self.true_roles {
            if roles.len() != self.instances.nrows() {
                return fail(format!("{} roles for {} instances", roles.len(), self.instances.nrows()));
            }
        }
        if self.instances.iter().chain(self.pkis.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features of bag {}", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub bags: Vec<Bag>,
}

impl Dataset {
    pub fn raw_dim(&self) -> usize {
        self.bags.first().map_or(0, |b| b.instances.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        if self.bags.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let m = self.raw_dim();
        let mut seen = std::collections::HashSet::new();
        for bag in &self.bags {
            bag.validate(self.classes)?;
            if bag.instances.ncols() != m {
                return Err(Error::contract(format!(
                    "raw dimension {} differs from the dataset's {m}",
                    bag.instances.ncols()
                ))
                .in_bag(&bag.id));
            }
            if !seen.insert(bag.id.as_str()) {
                return Err(Error::contract(format!("duplicate bag id '{}'", bag.id)));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.bags.iter().map(|b| b.label).collect()
    }

    pub fn summary(&self) -> String {
        let instances: usize = self.bags.iter().map(|b| b.instances.nrows()).sum();
        let pkis: usize = self.bags.iter().map(|b| b.pkis.nrows()).sum();
        let mut per_class = vec![0usize; self.classes];
        for b in &self.bags {
            per_class[b.label] += 1;
        }
        format!(
            "{} bags ({} per class: {:?}), {} instances, {} prior instances, raw dim {}",
            self.bags.len(),
            self.classes,
            per_class,
            instances,
            pkis,
            self.raw_dim()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub bags_per_class: usize,
    pub instances_per_bag: usize,
    pub pki_per_bag: usize,
    pub raw_dim: usize,
    pub latent_dim: usize,
    /// Per-class (TI, NTI, BGI) proportions. Empty means 0.40/0.35/0.25 for every class.
    pub role_mixture: Vec<[f64; 3]>,
    /// Radius of the class-specific tumor centers.
    pub class_separation: f64,
    pub noise_sigma: f64,
    /// Quadratic bend of each tumor component along a class-specific direction.
    pub curvature: f64,
    /// Number of leading raw coordinates carrying extra class-independent noise.
    pub noise_dims: usize,
    pub noise_dim_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            bags_per_class: 40,
            instances_per_bag: 96,
            pki_per_bag: 8,
            raw_dim: 32,
            latent_dim: 6,
            role_mixture: Vec::new(),
            class_separation: 1.5,
            noise_sigma: 0.3,
            curvature: 0.0,
            noise_dims: 0,
            noise_dim_scale: 2.0,
            seed: 0,
        }
    }
}

const DEFAULT_MIXTURE: [f64; 3] = [0.40, 0.35, 0.25];
const LATENT_SPREAD: f64 = 0.5;

impl SynthConfig {
    pub fn mixture(&self, class: usize) -> [f64; 3] {
        self.role_mixture.get(class).copied().unwrap_or(DEFAULT_MIXTURE)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return bad("at least 2 classes are required".into());
        }
        if self.bags_per_class == 0 || self.pki_per_bag == 0 {
            return bad("bags_per_class and pki_per_bag must be positive".into());
        }
        if self.instances_per_bag < 3 {
            return bad("instances_per_bag must be at least 3".into());
        }
        if self.latent_dim == 0 || self.latent_dim >= self.raw_dim {
            return bad(format!("latent_dim must satisfy 1 <= latent_dim < raw_dim ({})", self.raw_dim));
        }
        if self.noise_dims > self.raw_dim {
            return bad("noise_dims exceeds raw_dim".into());
        }
        if !(self.class_separation > 0.0) || !(self.noise_sigma >= 0.0) || !self.curvature.is_finite() {
            return bad("class_separation must be > 0, noise_sigma >= 0".into());
        }
        if !self.role_mixture.is_empty() && self.role_mixture.len() != self.classes {
            return bad("role_mixture needs one entry per class".into());
        }
        for c in 0..self.classes {
            let p = self.mixture(c);
            if p.iter().any(|&v| !(v > 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::contract(format!("role proportions {p:?} of class {c} must be positive and sum to 1")));
            }
            self.role_counts(c)?;
        }
        Ok(())
    }

    fn role_counts(&self, class: usize) -> Result<[usize; 3]> {
        let n = self.instances_per_bag;
        let p = self.mixture(class);
        let ti = ((p[0] * n as f64).round() as usize).max(1);
        let nti = ((p[1] * n as f64).round() as usize).max(1);
        if ti + nti >= n {
            return Err(Error::contract(format!(
                "proportions {p:?} leave no background instances in a bag of {n}"
            )));
        }
        Ok([ti, nti, n - ti - nti])
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    gaussian_vector(rng, n).normalize()
}

fn orthonormal_columns(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let g = Matrix::from_fn(n, d, |_, _| StandardNormal.sample(rng));
    g.qr().q().columns(0, d).into_owned()
}

struct Component {
    center: Vector,
    basis: Matrix,
    bend: Vector,
}

impl Component {
    fn draw(&self, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vector {
        let latent = gaussian_vector(rng, cfg.latent_dim) * LATENT_SPREAD;
        let mut x = &self.center + &self.basis * &latent;
        if cfg.curvature != 0.0 {
            let t = latent[0] / LATENT_SPREAD;
            x += &self.bend * (cfg.curvature * (t * t - 1.0));
        }
        x += gaussian_vector(rng, cfg.raw_dim) * cfg.noise_sigma;
        for j in 0..cfg.noise_dims {
            let e: f64 = StandardNormal.sample(rng);
            x[j] += cfg.noise_dim_scale * e;
        }
        x
    }
}

/// Generates a labeled dataset whose tumor instances (and prior instances)
/// come from a class-specific low-dimensional component, non-tumor instances
/// from a shared component, and background instances from a distant one.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let m = cfg.raw_dim;
    let sep = cfg.class_separation;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let component = |rng: &mut ChaCha8Rng, radius: f64| Component {
        center: unit_vector(rng, m) * radius,
        basis: orthonormal_columns(rng, m, cfg.latent_dim),
        bend: unit_vector(rng, m),
    };
    let tumor: Vec<Component> = (0..cfg.classes).map(|_| component(&mut rng, sep)).collect();
    let non_tumor = component(&mut rng, 2.0 * sep);
    let background = component(&mut rng, 3.5 * sep);

    let mut bags = Vec::with_capacity(cfg.classes * cfg.bags_per_class);
    for (class, class_tumor) in tumor.iter().enumerate() {
        let counts = cfg.role_counts(class)?;
        for b in 0..cfg.bags_per_class {
            let mut roles: Vec<Role> = std::iter::repeat_n(Role::Tumor, counts[0])
                .chain(std::iter::repeat_n(Role::NonTumor, counts[1]))
                .chain(std::iter::repeat_n(Role::Background, counts[2]))
                .collect();
            roles.shuffle(&mut rng);
            let mut instances = Matrix::zeros(cfg.instances_per_bag, m);
            for (i, role) in roles.iter().enumerate() {
                let src = match role {
                    Role::Tumor => class_tumor,
                    Role::NonTumor => &non_tumor,
                    Role::Background => &background,
                };
                instances.set_row(i, &src.draw(cfg, &mut rng).transpose());
            }
            let mut pkis = Matrix::zeros(cfg.pki_per_bag, m);
            for i in 0..cfg.pki_per_bag {
                pkis.set_row(i, &class_tumor.draw(cfg, &mut rng).transpose());
            }
            bags.push(Bag {
                id: format!("c{class}_b{b:04}"),
                instances,
                label: class,
                true_roles: Some(roles),
                pkis,
            });
        }
    }
    Ok(Dataset {
        classes: cfg.classes,
        bags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub features: PathBuf,
    pub label: usize,
    pub pkis: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub classes: usize,
    pub bags: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::new();
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

fn read_matrix(path: &Path) -> Result<Matrix> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Load {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(rows.len() + 1, |p| p.line() as usize);
        let row = record
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Load {
                    path: path.to_path_buf(),
                    line,
                    message: format!("'{f}': {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Load {
                    path: path.to_path_buf(),
                    line,
                    message: format!("{} columns, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Load {
            path: path.to_path_buf(),
            line: 0,
            message: "no rows".into(),
        });
    }
    let cols = rows[0].len();
    Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn read_roles(path: &Path) -> Result<Vec<Role>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.parse::<Role>().map_err(|e| Error::Load {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes `dataset` under `dir` and returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let bag_dir = dir.join("bags");
    fs::create_dir_all(&bag_dir).map_err(io_err(&bag_dir))?;
    let mut entries = Vec::with_capacity(dataset.bags.len());
    for bag in &dataset.bags {
        let features = PathBuf::from("bags").join(format!("{}.csv", bag.id));
        let pkis = PathBuf::from("bags").join(format!("{}.pki.csv", bag.id));
        write_matrix(&dir.join(&features), &bag.instances)?;
        write_matrix(&dir.join(&pkis), &bag.pkis)?;
        let roles = match &bag.true_roles {
            Some(r) => {
                let rel = PathBuf::from("bags").join(format!("{}.roles.csv", bag.id));
                let text: String = r.iter().map(|r| format!("{r}\n")).collect();
                let path = dir.join(&rel);
                fs::write(&path, text).map_err(io_err(&path))?;
                Some(rel)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: bag.id.clone(),
            features,
            label: bag.label,
            pkis,
            roles,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        classes: dataset.classes,
        bags: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}

/// Loads and validates a dataset. `path` may name the manifest or its directory.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let path = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Load {
            path,
            line: 0,
            message: format!("unsupported manifest version {}", manifest.version),
        });
    }
    if manifest.bags.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let root = path.parent().unwrap_or(Path::new("."));
    let bags = manifest
        .bags
        .iter()
        .map(|e| {
            let roles = e.roles.as_ref().map(|r| read_roles(&root.join(r))).transpose()?;
            Ok(Bag {
                id: e.id.clone(),
                instances: read_matrix(&root.join(&e.features))?,
                label: e.label,
                true_roles: roles,
                pkis: read_matrix(&root.join(&e.pkis))?,
            })
        })
        .collect::<Result<Vec<Bag>>>()?;
    let dataset = Dataset {
        classes: manifest.classes,
        bags,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Stratified split keeping at least one validation bag per class that has
/// two or more bags. Bags keep their dataset order inside each part.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::contract(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; dataset.bags.len()];
    for class in 0..dataset.classes {
        let mut idx: Vec<usize> = (0..dataset.bags.len()).filter(|&i| dataset.bags[i].label == class).collect();
        let n = idx.len();
        if n == 0 {
            continue;
        }
        idx.shuffle(&mut rng);
        let mut n_train = (train_fraction * n as f64).round() as usize;
        if n >= 2 {
            n_train = n_train.clamp(1, n - 1);
        } else {
            n_train = 0;
        }
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let pick = |want: bool| Dataset {
        classes: dataset.classes,
        bags: dataset
            .bags
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| t == want)
            .map(|(b, _)| b.clone())
            .collect(),
    };
    Ok((pick(true), pick(false)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            bags_per_class: 4,
            instances_per_bag: 20,
            pki_per_bag: 5,
            raw_dim: 8,
            latent_dim: 2,
            ..Default::default()
        }
    }

    #[test]
    fn generator_is_deterministic_and_valid() {
        let a = gen_synthetic(&small()).unwrap();
        let b = gen_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.bags.len(), 12);
        let roles = a.bags[0].true_roles.as_ref().unwrap();
        assert_eq!(roles.iter().filter(|r| **r == Role::Tumor).count(), 8);
        assert_eq!(roles.iter().filter(|r| **r == Role::NonTumor).count(), 7);
        let other = gen_synthetic(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn infeasible_proportions_are_rejected() {
        let cfg = SynthConfig {
            role_mixture: vec![[0.5, 0.6, -0.1]; 3],
            ..small()
        };
        assert!(matches!(gen_synthetic(&cfg), Err(Error::Contract(_))));
        let cfg = SynthConfig {
            instances_per_bag: 3,
            role_mixture: vec![[0.7, 0.2, 0.1]; 3],
            ..small()
        };
        assert!(gen_synthetic(&cfg).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_synthetic(&small()).unwrap();
        let manifest = save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_manifest(&manifest).unwrap(), ds);
        assert_eq!(load_manifest(dir.path()).unwrap(), ds);
    }

    #[test]
    fn loader_reports_problems() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, r#"{"version":1,"classes":2,"bags":[]}"#).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::EmptyDataset)));

        let missing = load_manifest(&dir.path().join("nope.json")).unwrap_err();
        assert_eq!(missing.kind(), crate::ErrorKind::MissingInput);

        fs::write(dir.path().join("x.csv"), "1,2\n3,4\n5,6\n").unwrap();
        fs::write(dir.path().join("p.csv"), "1,2,3\n").unwrap();
        fs::write(
            &path,
            r#"{"version":1,"classes":2,"bags":[{"id":"a","features":"x.csv","label":0,"pkis":"p.csv"}]}"#,
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("bag a") && err.contains("dimension"), "{err}");

        fs::write(dir.path().join("p.csv"), "1,2\n").unwrap();
        fs::write(
            &path,
            r#"{"version":1,"classes":2,"bags":[{"id":"a","features":"x.csv","label":5,"pkis":"p.csv"}]}"#,
        )
        .unwrap();
        assert!(load_manifest(&path).unwrap_err().to_string().contains("label 5"));

        fs::write(dir.path().join("x.csv"), "1,2\n3,oops\n5,6\n").unwrap();
        fs::write(
            &path,
            r#"{"version":1,"classes":2,"bags":[{"id":"a","features":"x.csv","label":1,"pkis":"p.csv"}]}"#,
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::Load { line: 2, .. }), "{err}");
    }

    #[test]
    fn five_prior_instance_bag_loads() {
        let dir = tempfile::tempdir().unwrap();
        let rows: String = (0..6).map(|i| format!("{i},{}\n", i * i)).collect();
        fs::write(dir.path().join("bag.csv"), rows).unwrap();
        let pkis: String = (0..5).map(|i| format!("{}.5,1\n", i)).collect();
        fs::write(dir.path().join("bag.pki.csv"), pkis).unwrap();
        fs::write(
            dir.path().join("manifest.json"),
            r#"{"version":1,"classes":2,"bags":[{"id":"public","features":"bag.csv","label":1,"pkis":"bag.pki.csv"}]}"#,
        )
        .unwrap();
        let ds = load_manifest(dir.path()).unwrap();
        assert_eq!(ds.bags[0].pkis.nrows(), 5);
        assert!(ds.bags[0].true_roles.is_none());
    }

    #[test]
    fn split_is_stratified() {
        let ds = gen_synthetic(&SynthConfig {
            bags_per_class: 10,
            ..small()
        })
        .unwrap();
        let (train, val) = split(&ds, 0.6, 0).unwrap();
        for c in 0..3 {
            assert_eq!(train.bags.iter().filter(|b| b.label == c).count(), 6);
            assert_eq!(val.bags.iter().filter(|b| b.label == c).count(), 4);
        }
        assert_eq!(split(&ds, 0.6, 0).unwrap(), (train, val));

        let (_, val) = split(&ds, 0.99, 0).unwrap();
        for c in 0..3 {
            assert!(val.bags.iter().filter(|b| b.label == c).count() >= 1);
        }
        assert!(split(&ds, 1.0, 0).is_err());
    }
}

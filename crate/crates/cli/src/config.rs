//! Experiment configuration files.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment            (also after a value: key = 3  # note)
//! [section]            one of task, network, train, analysis, grid, output
//! key = value          lists are comma-separated
//! ```
//!
//! Every key has a default (see [`ExperimentConfig::resolved`]); unknown
//! sections or keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use coordnorm_core::net::NormPlacement;
use coordnorm_core::train::{Optimizer, NORMALIZED_LR, PLAIN_LR};
use coordnorm_core::{NetworkConfig, NormKind, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("bad value for `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("{0}")]
    Io(String),
}

const SECTIONS: [&str; 6] = ["task", "network", "train", "analysis", "grid", "output"];

/// Raw `section.key → value` pairs.
pub type RawConfig = BTreeMap<String, String>;

pub fn parse_raw(text: &str) -> Result<RawConfig, ConfigError> {
    let mut out = RawConfig::new();
    let mut section: Option<String> = None;
    for (n, raw_line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax { line: line_no, message: "unterminated section header".into() })?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::UnknownSection { line: line_no, name: name.into() });
            }
            section = Some(name.into());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: line_no, message: format!("expected `key = value`, got `{line}`") })?;
        let sec = section
            .as_ref()
            .ok_or_else(|| ConfigError::Syntax { line: line_no, message: "key outside any section".into() })?;
        let key = format!("{sec}.{}", k.trim());
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ConfigError::Syntax { line: line_no, message: format!("duplicate key `{key}`") });
        }
    }
    Ok(out)
}

/// What the network approximates.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskConfig {
    Signal1d { freqs: Vec<f64>, amps: Vec<f64>, samples: usize },
    /// `image` of `None` uses the built-in synthetic picture.
    Image { image: Option<PathBuf>, crop: usize },
    Ct { side: usize, angles: usize, detectors: usize },
    Mri { side: usize, fraction: f64, mask_seed: u64 },
    Occupancy { grid: Option<PathBuf>, side: usize, sample_count: usize, sample_seed: u64 },
}

impl TaskConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Signal1d { .. } => "signal1d",
            Self::Image { .. } => "image",
            Self::Ct { .. } => "ct",
            Self::Mri { .. } => "mri",
            Self::Occupancy { .. } => "occupancy",
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::Signal1d { .. } => (1, 1),
            Self::Image { .. } => (2, 3),
            Self::Ct { .. } | Self::Mri { .. } => (2, 1),
            Self::Occupancy { .. } => (3, 1),
        }
    }
}

/// A network variant: input encoding plus normalization, written `relu+bn`, `pe+cn`, `pe`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Method {
    pub positional: bool,
    pub norm: NormKind,
}

impl Method {
    pub fn label(&self) -> String {
        let base = if self.positional { "pe" } else { "relu" };
        match self.norm {
            NormKind::None => base.to_string(),
            k => format!("{base}+{}", k.label()),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (base, norm) = match s.split_once('+') {
            Some((b, n)) => (b, n.parse::<NormKind>().map_err(|e| e.to_string())?),
            None => (s, NormKind::None),
        };
        let positional = match base {
            "relu" => false,
            "pe" => true,
            other => return Err(format!("unknown method base `{other}` (relu or pe)")),
        };
        Ok(Self { positional, norm })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSection {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub pe_bases: usize,
    pub norm: NormKind,
    pub placement: NormPlacement,
    pub eps: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub iterations: usize,
    /// `None` picks the default for the normalization in use.
    pub learning_rate: Option<f64>,
    pub lr_floor: Option<f64>,
    /// Floor as a fraction of the learning rate, used when `lr_floor` is unset.
    pub floor_fraction: f64,
    pub optimizer: Optimizer,
    pub record_every: usize,
    pub bands: usize,
    pub ssim: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSection {
    pub norms: Vec<NormKind>,
    pub seeds: Vec<u64>,
    pub hist_bins: usize,
    /// Also summarize the initial kernel during training runs.
    pub ntk: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub analysis: AnalysisSection,
    pub grid: GridSection,
    pub output_dir: PathBuf,
}

struct Reader {
    raw: RawConfig,
    used: Vec<String>,
    base_dir: PathBuf,
}

impl Reader {
    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.used.push(key.into());
        match self.raw.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| ConfigError::Value { key: key.into(), message: e.to_string() }),
        }
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.used.push(key.into());
        match self.raw.get(key).map(String::as_str) {
            None | Some("default") => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e: T::Err| ConfigError::Value { key: key.into(), message: e.to_string() }),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.used.push(key.into());
        match self.raw.get(key) {
            None => Ok(default),
            Some(v) if v.trim().is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e: T::Err| ConfigError::Value { key: key.into(), message: e.to_string() })
                })
                .collect(),
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.used.push(key.into());
        self.raw.get(key).filter(|v| !v.is_empty() && v.as_str() != "none").map(|v| {
            let p = PathBuf::from(v);
            if p.is_absolute() { p } else { self.base_dir.join(p) }
        })
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.used.push(key.into());
        match self.raw.get(key).map(String::as_str) {
            None => Ok(default),
            Some("true" | "yes" | "on" | "1") => Ok(true),
            Some("false" | "no" | "off" | "0") => Ok(false),
            Some(v) => Err(ConfigError::Value { key: key.into(), message: format!("`{v}` is not a boolean") }),
        }
    }
}

fn positive(key: &str, v: usize) -> Result<usize, ConfigError> {
    if v == 0 {
        return Err(ConfigError::Value { key: key.into(), message: "must be >= 1".into() });
    }
    Ok(v)
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parse config text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw = parse_raw(text)?;
        let mut r = Reader { raw, used: Vec::new(), base_dir: base_dir.to_path_buf() };
        let kind: String = r.get("task.kind", "signal1d".to_string())?;
        let task = match kind.as_str() {
            "signal1d" => TaskConfig::Signal1d {
                freqs: r.list("task.freqs", vec![2.0, 16.0, 48.0])?,
                amps: r.list("task.amps", vec![1.0, 1.0, 1.0])?,
                samples: positive("task.samples", r.get("task.samples", 256)?)?,
            },
            "image" => TaskConfig::Image { image: r.path("task.image"), crop: positive("task.crop", r.get("task.crop", 64)?)? },
            "ct" => TaskConfig::Ct {
                side: positive("task.side", r.get("task.side", 64)?)?,
                angles: positive("task.angles", r.get("task.angles", 20)?)?,
                detectors: positive("task.detectors", r.get("task.detectors", 64)?)?,
            },
            "mri" => TaskConfig::Mri {
                side: positive("task.side", r.get("task.side", 64)?)?,
                fraction: r.get("task.fraction", 0.25)?,
                mask_seed: r.get("task.mask_seed", 1)?,
            },
            "occupancy" => TaskConfig::Occupancy {
                grid: r.path("task.grid"),
                side: positive("task.side", r.get("task.side", 32)?)?,
                sample_count: positive("task.sample_count", r.get("task.sample_count", 4096)?)?,
                sample_seed: r.get("task.sample_seed", 1)?,
            },
            other => {
                return Err(ConfigError::Value {
                    key: "task.kind".into(),
                    message: format!("`{other}` is not one of signal1d, image, ct, mri, occupancy"),
                })
            }
        };
        let network = NetworkSection {
            hidden_layers: positive("network.hidden_layers", r.get("network.hidden_layers", 4)?)?,
            hidden_width: positive("network.hidden_width", r.get("network.hidden_width", 64)?)?,
            pe_bases: r.get("network.pe_bases", 0)?,
            norm: r.get("network.norm", NormKind::None)?,
            placement: r.get("network.placement", NormPlacement::AllHidden)?,
            eps: r.get("network.eps", 1e-5)?,
            seed: r.get("network.seed", 1)?,
        };
        let optimizer = match r.get("train.optimizer", "adam".to_string())?.as_str() {
            "adam" => Optimizer::Adam {
                beta1: r.get("train.beta1", 0.9)?,
                beta2: r.get("train.beta2", 0.999)?,
                eps: r.get("train.adam_eps", 1e-8)?,
            },
            "gd" => Optimizer::GradientDescent,
            other => return Err(ConfigError::Value { key: "train.optimizer".into(), message: format!("`{other}` is not adam or gd") }),
        };
        // Adam constants are only read for adam; mark them used regardless
        r.used.extend(["train.beta1", "train.beta2", "train.adam_eps"].map(String::from));
        let train = TrainSection {
            iterations: r.get("train.iterations", 1000)?,
            learning_rate: r.opt("train.learning_rate")?,
            lr_floor: r.opt("train.lr_floor")?,
            floor_fraction: r.get("train.floor_fraction", 1.0)?,
            optimizer,
            record_every: positive("train.record_every", r.get("train.record_every", 100)?)?,
            bands: r.get("train.bands", 16)?,
            ssim: r.bool("train.ssim", true)?,
        };
        let analysis = AnalysisSection {
            norms: r.list("analysis.norms", vec![NormKind::None])?,
            seeds: r.list("analysis.seeds", vec![1])?,
            hist_bins: positive("analysis.hist_bins", r.get("analysis.hist_bins", 40)?)?,
            ntk: r.bool("analysis.ntk", false)?,
        };
        let grid = GridSection {
            methods: r.list("grid.methods", vec![Method { positional: false, norm: NormKind::None }])?,
            seeds: r.list("grid.seeds", vec![1])?,
        };
        let output_dir = r.path("output.dir").unwrap_or_else(|| PathBuf::from("out"));
        for key in r.raw.keys() {
            if !r.used.contains(key) {
                let (section, k) = key.split_once('.').unwrap();
                return Err(ConfigError::UnknownKey { section: section.into(), key: k.into() });
            }
        }
        let cfg = Self { task, network, train, analysis, grid, output_dir };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if !(self.train.floor_fraction > 0.0 && self.train.floor_fraction <= 1.0) {
            return Err(ConfigError::Value { key: "train.floor_fraction".into(), message: "must be in (0, 1]".into() });
        }
        if !(self.network.eps > 0.0) {
            return Err(ConfigError::Value { key: "network.eps".into(), message: "must be > 0".into() });
        }
        if self.analysis.seeds.is_empty() || self.grid.seeds.is_empty() {
            return Err(ConfigError::Value { key: "seeds".into(), message: "seed lists must not be empty".into() });
        }
        if self.grid.methods.is_empty() {
            return Err(ConfigError::Value { key: "grid.methods".into(), message: "no methods".into() });
        }
        if self.analysis.norms.is_empty() {
            return Err(ConfigError::Value { key: "analysis.norms".into(), message: "no normalizations".into() });
        }
        if let TaskConfig::Signal1d { freqs, amps, .. } = &self.task {
            if freqs.len() != amps.len() {
                return Err(ConfigError::Value { key: "task.amps".into(), message: "one amplitude per frequency".into() });
            }
        }
        Ok(())
    }

    /// Network for the configured task, with normalization and seed overridden.
    pub fn network_config(&self, norm: NormKind, positional: Option<bool>, seed: u64) -> NetworkConfig {
        let (inputs, outputs) = self.task.dims();
        let pe = match positional {
            Some(true) if self.network.pe_bases == 0 => DEFAULT_PE_BASES,
            Some(true) => self.network.pe_bases,
            Some(false) => 0,
            None => self.network.pe_bases,
        };
        let mut cfg = NetworkConfig::new(inputs, self.network.hidden_layers, self.network.hidden_width, outputs)
            .with_norm(norm)
            .with_placement(self.network.placement)
            .with_pe(pe)
            .with_seed(seed);
        cfg.norm_eps = self.network.eps;
        cfg
    }

    pub fn train_config(&self, norm: NormKind) -> TrainConfig {
        let default_lr = if norm == NormKind::None { PLAIN_LR } else { NORMALIZED_LR };
        let lr = self.train.learning_rate.unwrap_or(default_lr);
        TrainConfig {
            iterations: self.train.iterations,
            learning_rate: lr,
            lr_floor: self.train.lr_floor.unwrap_or(lr * self.train.floor_fraction),
            optimizer: self.train.optimizer,
            record_every: self.train.record_every,
            bands: self.train.bands,
            track_ssim: self.train.ssim,
        }
    }

    /// Every key with its effective value, in the input grammar.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let list = |v: &[String]| v.join(", ");
        let _ = writeln!(s, "[task]\nkind = {}", self.task.kind());
        match &self.task {
            TaskConfig::Signal1d { freqs, amps, samples } => {
                let f: Vec<String> = freqs.iter().map(|v| v.to_string()).collect();
                let a: Vec<String> = amps.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "freqs = {}\namps = {}\nsamples = {samples}", list(&f), list(&a));
            }
            TaskConfig::Image { image, crop } => {
                let img = image.as_ref().map_or("none".to_string(), |p| p.display().to_string());
                let _ = writeln!(s, "image = {img}\ncrop = {crop}");
            }
            TaskConfig::Ct { side, angles, detectors } => {
                let _ = writeln!(s, "side = {side}\nangles = {angles}\ndetectors = {detectors}");
            }
            TaskConfig::Mri { side, fraction, mask_seed } => {
                let _ = writeln!(s, "side = {side}\nfraction = {fraction}\nmask_seed = {mask_seed}");
            }
            TaskConfig::Occupancy { grid, side, sample_count, sample_seed } => {
                let g = grid.as_ref().map_or("none".to_string(), |p| p.display().to_string());
                let _ = writeln!(s, "grid = {g}\nside = {side}\nsample_count = {sample_count}\nsample_seed = {sample_seed}");
            }
        }
        let n = &self.network;
        let _ = writeln!(
            s,
            "\n[network]\nhidden_layers = {}\nhidden_width = {}\npe_bases = {}\nnorm = {}\nplacement = {}\neps = {:e}\nseed = {}",
            n.hidden_layers, n.hidden_width, n.pe_bases, n.norm, n.placement, n.eps, n.seed
        );
        let t = &self.train;
        let show = |v: Option<f64>| v.map_or("default".to_string(), |x| format!("{x:e}"));
        let _ = writeln!(
            s,
            "\n[train]\niterations = {}\n# default: {NORMALIZED_LR:e} with normalization, {PLAIN_LR:e} without\nlearning_rate = {}\nlr_floor = {}\nfloor_fraction = {}",
            t.iterations,
            show(t.learning_rate),
            show(t.lr_floor),
            t.floor_fraction
        );
        match t.optimizer {
            Optimizer::Adam { beta1, beta2, eps } => {
                let _ = writeln!(s, "optimizer = adam\nbeta1 = {beta1}\nbeta2 = {beta2}\nadam_eps = {eps:e}");
            }
            Optimizer::GradientDescent => {
                let _ = writeln!(s, "optimizer = gd");
            }
        }
        let _ = writeln!(s, "record_every = {}\nbands = {}\nssim = {}", t.record_every, t.bands, t.ssim);
        let a = &self.analysis;
        let norms: Vec<String> = a.norms.iter().map(|k| k.label().to_string()).collect();
        let seeds: Vec<String> = a.seeds.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "\n[analysis]\nnorms = {}\nseeds = {}\nhist_bins = {}\nntk = {}", list(&norms), list(&seeds), a.hist_bins, a.ntk);
        let methods: Vec<String> = self.grid.methods.iter().map(Method::label).collect();
        let gseeds: Vec<String> = self.grid.seeds.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "\n[grid]\nmethods = {}\nseeds = {}", list(&methods), list(&gseeds));
        let _ = writeln!(s, "\n[output]\ndir = {}", self.output_dir.display());
        s
    }
}

/// Bases used when a method asks for positional encoding but the config leaves it off.
pub const DEFAULT_PE_BASES: usize = 10;

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn defaults_fill_everything() {
        let c = parse("").unwrap();
        assert_eq!(c.task, TaskConfig::Signal1d { freqs: vec![2.0, 16.0, 48.0], amps: vec![1.0; 3], samples: 256 });
        assert_eq!(c.network.hidden_width, 64);
        assert_eq!(c.train_config(NormKind::Batch).learning_rate, NORMALIZED_LR);
        assert_eq!(c.train_config(NormKind::None).learning_rate, PLAIN_LR);
    }

    #[test]
    fn resolved_snapshot_reparses_to_the_same_config() {
        let c = parse("[task]\nkind = ct\nangles = 12\n[network]\nnorm = cn # tail comment\n[grid]\nmethods = pe, pe+cn\n").unwrap();
        let again = parse(&c.resolved()).unwrap();
        assert_eq!(again.task, c.task);
        assert_eq!(again.network, c.network);
        assert_eq!(again.grid, c.grid);
        assert_eq!(again.train_config(NormKind::Cross), c.train_config(NormKind::Cross));
    }

    #[test]
    fn unknown_keys_and_sections_rejected() {
        assert!(matches!(parse("[task]\nkindd = ct"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(parse("[tasks]\n"), Err(ConfigError::UnknownSection { .. })));
        assert!(matches!(parse("kind = ct"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse("[task]\nkind ct"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse("[task]\nkind = ct\nkind = image"), Err(ConfigError::Syntax { .. })));
        // a key only meaningful for another task kind is unknown too
        assert!(matches!(parse("[task]\nkind = ct\nfreqs = 1"), Err(ConfigError::UnknownKey { .. })));
    }

    #[test]
    fn bad_values_rejected() {
        assert!(matches!(parse("[network]\nnorm = xx"), Err(ConfigError::Value { .. })));
        assert!(matches!(parse("[network]\nhidden_width = 0"), Err(ConfigError::Value { .. })));
        assert!(matches!(parse("[grid]\nmethods = siren"), Err(ConfigError::Value { .. })));
        assert!(matches!(parse("[task]\nfreqs = 1, 2\namps = 1"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn methods_parse_and_label() {
        for s in ["relu", "relu+bn", "pe", "pe+cn", "pe+gn", "relu+ln"] {
            assert_eq!(s.parse::<Method>().unwrap().label(), s);
        }
    }

    #[test]
    fn relative_paths_resolve_against_the_config() {
        let c = parse("[task]\nkind = image\nimage = pics/a.ppm\n[output]\ndir = /abs/out").unwrap();
        assert_eq!(c.task, TaskConfig::Image { image: Some(PathBuf::from("/base/pics/a.ppm")), crop: 64 });
        assert_eq!(c.output_dir, PathBuf::from("/abs/out"));
    }

    #[test]
    fn method_positional_override() {
        let c = parse("[task]\nkind = image").unwrap();
        assert_eq!(c.network_config(NormKind::None, Some(true), 1).pe_bases, DEFAULT_PE_BASES);
        assert_eq!(c.network_config(NormKind::None, Some(false), 1).pe_bases, 0);
        assert_eq!(c.network_config(NormKind::None, None, 1).input_dim, 2);
    }
}

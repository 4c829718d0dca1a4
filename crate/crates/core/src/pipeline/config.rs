use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datapipe::{DataFormat, Protocol, DEFAULT_FRAMES};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gcn::BackboneConfig;
use crate::jrpm::{PoolMode, DEFAULT_SCALES, MAX_SCALE};
use crate::losses::FusionLossConfig;
use crate::numerics::AdamConfig;
use crate::skeleton::{LayoutName, DEFAULT_ALPHA};

/// Everything a training or embedding run depends on besides its input files.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub layout: LayoutName,
    pub scales: Vec<usize>,
    pub pool_mode: PoolMode,
    pub backbone: BackboneConfig,
    pub d_out: usize,
    pub alpha: f64,
    /// Overrides of the built-in joint groups, keyed by scale.
    pub groups: BTreeMap<usize, Vec<Vec<usize>>>,
    pub data_root: Option<PathBuf>,
    pub data_format: DataFormat,
    pub protocol: Protocol,
    pub t_target: usize,
    pub p: usize,
    pub k: usize,
    pub loss: FusionLossConfig,
    pub optim: AdamConfig,
    pub iterations: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layout: LayoutName::OpenPose18,
            scales: DEFAULT_SCALES.to_vec(),
            pool_mode: PoolMode::default(),
            backbone: BackboneConfig::default(),
            d_out: 512,
            alpha: DEFAULT_ALPHA,
            groups: BTreeMap::new(),
            data_root: None,
            data_format: DataFormat::OpenposeJson,
            protocol: Protocol::CasiaB,
            t_target: DEFAULT_FRAMES,
            p: 8,
            k: 16,
            loss: FusionLossConfig::default(),
            optim: AdamConfig::default(),
            iterations: 80_000,
            checkpoint_every: 1000,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            parallel: false,
        }
    }
}

fn list<T: Display>(v: &[T], sep: &str) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

impl TrainConfig {
    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    /// Rejects invalid settings before any data is touched.
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; MAX_SCALE + 1];
        if self.scales.is_empty() {
            return Err(Error::Config("model.scales must not be empty".into()));
        }
        for &s in &self.scales {
            if !(1..=MAX_SCALE).contains(&s) {
                return Err(Error::Config(format!("model.scales: scale {s} outside 1..={MAX_SCALE}")));
            }
            if std::mem::replace(&mut seen[s], true) {
                return Err(Error::Config(format!("model.scales: scale {s} listed twice")));
            }
        }
        if let Some(s) = self.groups.keys().find(|s| !self.scales.contains(s)) {
            return Err(Error::Config(format!("pyramid.groups.s{s} given for an unused scale")));
        }
        self.loss.validate()?;
        self.backbone.validate()?;
        if self.p * self.k < 4 {
            return Err(Error::Config(format!(
                "batch.p * batch.k must be at least 4, got {} * {}",
                self.p, self.k
            )));
        }
        if self.p < 2 || self.k < 2 {
            return Err(Error::Config(format!(
                "batch-hard mining needs batch.p >= 2 and batch.k >= 2, got {} and {}",
                self.p, self.k
            )));
        }
        if self.t_target == 0 || self.d_out == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config(
                "data.t_target, model.d_out and train.checkpoint_every must be positive".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("model.alpha must be positive, got {}", self.alpha)));
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && o.eps > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::Config(format!(
                "optimizer settings out of range: lr {} beta1 {} beta2 {} eps {}",
                o.lr, o.beta1, o.beta2, o.eps
            )));
        }
        Ok(())
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "model.layout" => self.layout = v.parse()?,
            "model.scales" => self.scales = parse_list(key, v)?,
            "model.pool_mode" => self.pool_mode = v.parse()?,
            "model.channels" => self.backbone.channels = parse_list(key, v)?,
            "model.strides" => self.backbone.strides = parse_list(key, v)?,
            "model.kt" => self.backbone.kt = parse(key, v)?,
            "model.residual" => self.backbone.residual = parse_bool(key, v)?,
            "model.d_out" => self.d_out = parse(key, v)?,
            "model.alpha" => self.alpha = parse(key, v)?,
            "data.root" => self.data_root = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.format" => self.data_format = v.parse()?,
            "data.protocol" => self.protocol = v.parse()?,
            "data.t_target" => self.t_target = parse(key, v)?,
            "batch.p" => self.p = parse(key, v)?,
            "batch.k" => self.k = parse(key, v)?,
            "loss.lambda" => self.loss.lambda = parse(key, v)?,
            "loss.m_tri" => self.loss.m_tri = parse(key, v)?,
            "loss.m_arc" => self.loss.m_arc = parse(key, v)?,
            "loss.scale" => self.loss.scale = parse(key, v)?,
            "optim.lr" => self.optim.lr = parse(key, v)?,
            "optim.beta1" => self.optim.beta1 = parse(key, v)?,
            "optim.beta2" => self.optim.beta2 = parse(key, v)?,
            "optim.eps" => self.optim.eps = parse(key, v)?,
            "train.iterations" => self.iterations = parse(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            "exec.parallel" => self.parallel = parse_bool(key, v)?,
            _ => {
                let scale = key
                    .strip_prefix("pyramid.groups.s")
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
                let groups = v
                    .split(';')
                    .map(|g| parse_list(key, g))
                    .collect::<Result<Vec<Vec<usize>>>>()?;
                self.groups.insert(scale, groups);
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_category(&e))))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_category(&e))))
    }

    /// Every key, one per line; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("model.layout", self.layout.to_string());
        kv("model.scales", list(&self.scales, ","));
        kv("model.pool_mode", self.pool_mode.to_string());
        kv("model.channels", list(&self.backbone.channels, ","));
        kv("model.strides", list(&self.backbone.strides, ","));
        kv("model.kt", self.backbone.kt.to_string());
        kv("model.residual", self.backbone.residual.to_string());
        kv("model.d_out", self.d_out.to_string());
        kv("model.alpha", self.alpha.to_string());
        for (scale, groups) in &self.groups {
            let g: Vec<String> = groups.iter().map(|g| list(g, ",")).collect();
            kv(&format!("pyramid.groups.s{scale}"), g.join(";"));
        }
        kv(
            "data.root",
            self.data_root.as_ref().map_or(String::new(), |p| p.display().to_string()),
        );
        kv("data.format", self.data_format.to_string());
        kv("data.protocol", self.protocol.to_string());
        kv("data.t_target", self.t_target.to_string());
        kv("batch.p", self.p.to_string());
        kv("batch.k", self.k.to_string());
        kv("loss.lambda", self.loss.lambda.to_string());
        kv("loss.m_tri", self.loss.m_tri.to_string());
        kv("loss.m_arc", self.loss.m_arc.to_string());
        kv("loss.scale", self.loss.scale.to_string());
        kv("optim.lr", self.optim.lr.to_string());
        kv("optim.beta1", self.optim.beta1.to_string());
        kv("optim.beta2", self.optim.beta2.to_string());
        kv("optim.eps", self.optim.eps.to_string());
        kv("train.iterations", self.iterations.to_string());
        kv("train.checkpoint_every", self.checkpoint_every.to_string());
        kv("train.seed", self.seed.to_string());
        kv("output.dir", self.output_dir.display().to_string());
        kv("exec.parallel", self.parallel.to_string());
        s
    }
}

fn strip_category(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_stated_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.t_target, c.p, c.k), (120, 8, 16));
        assert_eq!((c.loss.lambda, c.loss.m_tri, c.loss.m_arc), (0.9, 0.2, 0.35));
        assert_eq!(c.backbone.channels, [64, 64, 64, 128, 128, 128, 256, 256, 256]);
        assert_eq!(c.scales, [1, 2, 3]);
        assert_eq!(c.d_out, 512);
        assert!(!c.parallel);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.set("model.scales", "1,3,6").unwrap();
        c.set("pyramid.groups.s3", "0,1,2;3,4,5,6,7,8,9,10,11,12,13,14,15,16,17").unwrap();
        c.set("data.protocol", "kinectgait:3").unwrap();
        c.set("data.root", "/tmp/x").unwrap();
        c.set("loss.lambda", "0.25").unwrap();
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = TrainConfig::from_text("# run\n\nbatch.p = 4 # identities\nbatch.k=2\n").unwrap();
        assert_eq!((c.p, c.k), (4, 2));
    }

    #[test]
    fn rejections() {
        for (k, v) in [
            ("model.scales", "0,1"),
            ("model.scales", "7"),
            ("model.scales", "2,2"),
            ("loss.lambda", "1.5"),
            ("loss.lambda", "-0.1"),
            ("batch.k", "1"),
        ] {
            let mut c = TrainConfig::default();
            c.set(k, v).unwrap();
            assert_eq!(c.validate().unwrap_err().category(), "config", "{k} = {v}");
        }
        let mut c = TrainConfig::default();
        c.p = 1;
        c.k = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_key_names_the_line() {
        let err = TrainConfig::from_text("batch.p = 4\nbatch.q = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("batch.q"), "{err}");
    }
}

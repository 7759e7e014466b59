//! The `dsattr.toml` config file. Relative paths resolve against the
//! directory holding the file; command-line flags override every field.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dsattr_core::{ColorMode, Error, Result, Thresholds};
use serde::Deserialize;

/// Key of a registered embedding set: color mode and resolution, written `color/64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SetKey {
    pub mode: ColorMode,
    pub resolution: u32,
}

impl SetKey {
    pub fn new(mode: ColorMode, resolution: u32) -> Self {
        Self { mode, resolution }
    }
}

impl fmt::Display for SetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.mode, self.resolution)
    }
}

impl FromStr for SetKey {
    type Err = Error;

    /// Accepts `mode/resolution`, or a full config key `grouping/mode/resolution`
    /// whose grouping part is ignored here.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        let (mode, res) = match parts.as_slice() {
            [m, r] | [_, m, r] => (m, r),
            _ => return Err(Error::input(format!("config key `{s}`: expected `mode/resolution`"))),
        };
        let mode = mode.parse()?;
        let resolution = res
            .parse()
            .ok()
            .filter(|r: &u32| *r > 0)
            .ok_or_else(|| Error::input(format!("config key `{s}`: resolution `{res}` is not a positive integer")))?;
        Ok(Self { mode, resolution })
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// COCO-style instances file.
    pub annotations: Option<PathBuf>,
    /// Decision log (JSON lines). Without one, the log lives in memory only.
    pub log: Option<PathBuf>,
    /// Where commands write report files when `--out` is not given.
    pub report_dir: Option<PathBuf>,
    /// Network spec used by `estimate-flops` and `recommend`.
    pub model: Option<PathBuf>,
    /// Histogram bins for `analyze-scale`.
    pub bins: Option<usize>,
    /// Seed for synthetic fixtures.
    pub seed: Option<u64>,
    /// Address `serve` listens on.
    pub bind: Option<String>,
    /// Resolution ladder, any order.
    pub ladder: Option<Vec<u32>>,
    /// Grouping files known to the service by name.
    pub groupings: Vec<PathBuf>,
    /// Embedding set registry, `"color/64" = "sets/color-64.semb"`.
    pub embeddings: BTreeMap<String, PathBuf>,
    pub thresholds: Thresholds,
}

pub const DEFAULT_BIND: &str = "127.0.0.1:8700";
pub const DEFAULT_REPORT_DIR: &str = "reports";

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| Error::format("config", e))?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.annotations, &mut self.log, &mut self.report_dir, &mut self.model]
            .into_iter()
            .flatten()
        {
            join(p);
        }
        self.groupings.iter_mut().for_each(join);
        self.embeddings.values_mut().for_each(join);
    }

    /// Registry with parsed keys.
    pub fn registry(&self) -> Result<BTreeMap<SetKey, PathBuf>> {
        self.embeddings
            .iter()
            .map(|(k, p)| Ok((k.parse()?, p.clone())))
            .collect()
    }

    pub fn report_dir(&self) -> PathBuf {
        self.report_dir.clone().unwrap_or_else(|| DEFAULT_REPORT_DIR.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let cfg = Config::parse(
            r#"
            annotations = "ann.json"
            log = "/abs/log.jsonl"
            ladder = [64, 32]
            groupings = ["g/a.toml"]
            [embeddings]
            "color/64" = "sets/c64.semb"
            [thresholds]
            bmax_warning_px = 12
            "#,
            Path::new("/proj"),
        )
        .unwrap();
        assert_eq!(cfg.annotations.unwrap(), PathBuf::from("/proj/ann.json"));
        assert_eq!(cfg.log.unwrap(), PathBuf::from("/abs/log.jsonl"));
        assert_eq!(cfg.groupings[0], PathBuf::from("/proj/g/a.toml"));
        assert_eq!(cfg.thresholds.bmax_warning_px, 12);
        assert_eq!(cfg.thresholds.few_classes, Thresholds::default().few_classes);
        let reg = Config::parse("[embeddings]\n\"gray/32\" = \"x.semb\"", Path::new("/p"))
            .unwrap()
            .registry()
            .unwrap();
        assert_eq!(reg[&SetKey::new(ColorMode::Gray, 32)], PathBuf::from("/p/x.semb"));
    }

    #[test]
    fn unknown_fields_and_bad_keys_are_errors() {
        assert!(Config::parse("anotations = \"x\"", Path::new("")).is_err());
        let cfg = Config::parse("[embeddings]\n\"blue/32\" = \"x\"", Path::new("")).unwrap();
        assert!(cfg.registry().is_err());
    }

    #[test]
    fn set_keys() {
        let k: SetKey = "gray/64".parse().unwrap();
        assert_eq!(k, SetKey::new(ColorMode::Gray, 64));
        assert_eq!(k.to_string(), "gray/64");
        assert_eq!("identity/color/32".parse::<SetKey>().unwrap(), SetKey::new(ColorMode::Color, 32));
        assert!("color".parse::<SetKey>().is_err());
        assert!("color/x".parse::<SetKey>().is_err());
        assert!("color/0".parse::<SetKey>().is_err());
    }
}

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::boost::BoostParams;
use crate::{Error, Result};

/// Run settings read from a `key = value` file and from command-line flags.
/// Unset fields fall back to [`BoostParams::default`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub k: Option<usize>,
    pub stages: Option<usize>,
    pub rounds: Option<usize>,
    pub regions: Option<usize>,
    pub ridge: Option<f64>,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mapping: Option<String>,
    pub negatives: Option<usize>,
}

pub const CONFIG_KEYS: &[&str] = &[
    "manifest",
    "k",
    "stages",
    "rounds",
    "regions",
    "ridge",
    "eps",
    "seed",
    "model",
    "out",
    "mapping",
    "negatives",
];

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Relative paths are
    /// resolved against the directory of `path`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            fn num<T: FromStr>(
                v: &str,
                key: &str,
                err: &dyn Fn(String) -> Error,
            ) -> Result<Option<T>> {
                v.parse()
                    .map(Some)
                    .map_err(|_| err(format!("bad value '{v}' for {key}")))
            }
            let file = |v: &str| Some(base.join(v));
            match key {
                "manifest" => cfg.manifest = file(value),
                "model" => cfg.model = file(value),
                "out" => cfg.out = file(value),
                "mapping" => cfg.mapping = Some(value.to_owned()),
                "k" => cfg.k = num(value, key, &err)?,
                "stages" => cfg.stages = num(value, key, &err)?,
                "rounds" => cfg.rounds = num(value, key, &err)?,
                "regions" => cfg.regions = num(value, key, &err)?,
                "negatives" => cfg.negatives = num(value, key, &err)?,
                "ridge" => cfg.ridge = num(value, key, &err)?,
                "eps" => cfg.eps = num(value, key, &err)?,
                "seed" => cfg.seed = num(value, key, &err)?,
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_owned()));
        }
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overridden_by(self, over: RunConfig) -> Self {
        Self {
            manifest: over.manifest.or(self.manifest),
            k: over.k.or(self.k),
            stages: over.stages.or(self.stages),
            rounds: over.rounds.or(self.rounds),
            regions: over.regions.or(self.regions),
            ridge: over.ridge.or(self.ridge),
            eps: over.eps.or(self.eps),
            seed: over.seed.or(self.seed),
            model: over.model.or(self.model),
            out: over.out.or(self.out),
            mapping: over.mapping.or(self.mapping),
            negatives: over.negatives.or(self.negatives),
        }
    }

    pub fn boost_params(&self) -> Result<BoostParams> {
        let mut p = BoostParams::default();
        if let Some(m) = &self.mapping {
            p.mapping = m.clone();
        }
        if let Some(k) = self.k {
            p.learner.k = k;
        }
        p.learner.train.ridge = self.ridge.or(p.learner.train.ridge);
        p.max_stages = self.stages.unwrap_or(p.max_stages);
        p.max_rounds = self.rounds.unwrap_or(p.max_rounds);
        p.candidate_regions = self.regions.unwrap_or(p.candidate_regions);
        p.eps = self.eps.unwrap_or(p.eps);
        p.seed = self.seed.unwrap_or(p.seed);
        p.negatives_per_stage = self.negatives.or(p.negatives_per_stage);
        p.validate()?;
        Ok(p)
    }
}

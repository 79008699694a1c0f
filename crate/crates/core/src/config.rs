//! Flat `section.key = value` configuration files.
//!
//! ```text
//! # comment
//! cvae.levels = 3
//! cvae.latent_channels = 2,2,2
//! train.lr = 0.001
//! ```
//!
//! Every key is typed and unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::baseline::E2EConfig;
use crate::cvae::CvaeConfig;
use crate::error::{Error, Result};
use crate::friction::FrictionHeadConfig;
use crate::synthetic::SceneSpec;
use crate::train::TrainConfig;

pub trait KvValue: Sized {
    fn parse_kv(raw: &str) -> std::result::Result<Self, String>;
    fn render_kv(&self) -> String;
}

macro_rules! kv_scalar {
    ($($t:ty),*) => {$(
        impl KvValue for $t {
            fn parse_kv(raw: &str) -> std::result::Result<Self, String> {
                raw.trim().parse::<$t>().map_err(|e| format!("{e} ({raw:?})"))
            }
            fn render_kv(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

kv_scalar!(usize, u64, f64, bool);

impl KvValue for String {
    fn parse_kv(raw: &str) -> std::result::Result<Self, String> {
        Ok(raw.trim().to_string())
    }
    fn render_kv(&self) -> String {
        self.clone()
    }
}

impl<T: KvValue> KvValue for Vec<T> {
    fn parse_kv(raw: &str) -> std::result::Result<Self, String> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',').map(T::parse_kv).collect()
    }
    fn render_kv(&self) -> String {
        self.iter().map(T::render_kv).collect::<Vec<_>>().join(",")
    }
}

/// A struct whose fields map one-to-one onto `prefix.field` keys.
pub trait KvSection {
    const PREFIX: &'static str;
    fn set_kv(&mut self, key: &str, raw: &str) -> Result<()>;
    fn entries(&self) -> Vec<(&'static str, String)>;
}

macro_rules! kv_section {
    ($ty:ty, $prefix:literal, [$($field:ident),* $(,)?]) => {
        impl $crate::config::KvSection for $ty {
            const PREFIX: &'static str = $prefix;

            fn set_kv(&mut self, key: &str, raw: &str) -> $crate::error::Result<()> {
                use $crate::config::KvValue;
                match key {
                    $(stringify!($field) => {
                        self.$field = KvValue::parse_kv(raw).map_err(|e| {
                            $crate::error::Error::Config(format!("{}.{}: {}", $prefix, key, e))
                        })?;
                        Ok(())
                    })*
                    _ => Err($crate::error::Error::Config(format!("unknown key {}.{}", $prefix, key))),
                }
            }

            fn entries(&self) -> Vec<(&'static str, String)> {
                use $crate::config::KvValue;
                vec![$((stringify!($field), self.$field.render_kv())),*]
            }
        }
    };
}
pub(crate) use kv_section;

/// Every tunable of an experiment, grouped by section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: SceneSpec,
    pub cvae: CvaeConfig,
    pub friction: FrictionHeadConfig,
    pub e2e: E2EConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
}

fn render_section<S: KvSection>(out: &mut String, section: &S) {
    for (k, v) in section.entries() {
        let _ = writeln!(out, "{}.{} = {}", S::PREFIX, k, v);
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let (section, field) = key.split_once('.').ok_or_else(|| {
                Error::Config(format!("line {}: key {key:?} has no section", lineno + 1))
            })?;
            let value = value.trim();
            match section {
                s if s == SceneSpec::PREFIX => cfg.data.set_kv(field, value),
                s if s == CvaeConfig::PREFIX => cfg.cvae.set_kv(field, value),
                s if s == FrictionHeadConfig::PREFIX => cfg.friction.set_kv(field, value),
                s if s == E2EConfig::PREFIX => cfg.e2e.set_kv(field, value),
                s if s == TrainConfig::PREFIX => cfg.train.set_kv(field, value),
                s if s == AugmentConfig::PREFIX => cfg.augment.set_kv(field, value),
                _ => Err(Error::Config(format!("unknown section {section:?}"))),
            }
            .map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", lineno + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        render_section(&mut out, &self.data);
        render_section(&mut out, &self.cvae);
        render_section(&mut out, &self.friction);
        render_section(&mut out, &self.e2e);
        render_section(&mut out, &self.train);
        render_section(&mut out, &self.augment);
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.cvae.validate()?;
        self.friction.validate()?;
        self.e2e.validate()?;
        self.train.validate()?;
        self.augment.validate()
    }

    /// Sets every section's seed.
    pub fn apply_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.cvae.seed = seed;
        self.friction.seed = seed;
        self.e2e.seed = seed;
        self.train.seed = seed;
    }
}

//! Flat `key = value` configuration files.
//!
//! Keys are dotted (`sim.marble_diameter`, `cem.particles`, ...). Lines
//! starting with `#` and blank lines are ignored. Array values are
//! comma-separated. Unknown keys are rejected so typos surface early.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::control::{CemConfig, EvalConfig, PGainSet};
use crate::dynamics::DynTrainConfig;
use crate::error::{Error, Result};
use crate::harness::{BenchConfig, CollectConfig};
use crate::nn::TrainConfig;
use crate::sim::{Finger, SimConfig};

#[derive(Debug, Clone, Default)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Removes and returns the raw value for `key`.
    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::Config(format!("unknown key `{k}`"))),
        }
    }
}

/// A scalar or array that can live in a config file.
pub trait KvValue: Sized {
    fn parse_kv(s: &str) -> std::result::Result<Self, String>;
    fn format_kv(&self) -> String;
}

macro_rules! kv_scalar {
    ($($t:ty),*) => {$(
        impl KvValue for $t {
            fn parse_kv(s: &str) -> std::result::Result<Self, String> {
                s.trim().parse::<$t>().map_err(|e| e.to_string())
            }
            fn format_kv(&self) -> String {
                format!("{:?}", self)
            }
        }
    )*};
}
kv_scalar!(f64, usize, u64, bool);

impl<const N: usize> KvValue for [f64; N] {
    fn parse_kv(s: &str) -> std::result::Result<Self, String> {
        let v = Vec::<f64>::parse_kv(s)?;
        v.try_into()
            .map_err(|v: Vec<f64>| format!("expected {N} values, got {}", v.len()))
    }
    fn format_kv(&self) -> String {
        self.as_slice().iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
    }
}

impl KvValue for Vec<f64> {
    fn parse_kv(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
            .collect()
    }
    fn format_kv(&self) -> String {
        self.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
    }
}

impl KvValue for Finger {
    fn parse_kv(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "left" => Ok(Finger::Left),
            "right" => Ok(Finger::Right),
            other => Err(format!("expected `left` or `right`, got `{other}`")),
        }
    }
    fn format_kv(&self) -> String {
        self.as_str().to_string()
    }
}

/// A config section stored under a key prefix such as `sim.`.
pub trait KvSection: Sized + Default {
    fn read_fields(&mut self, kv: &mut KvMap, prefix: &str) -> Result<()>;
    fn write_fields(&self, prefix: &str, out: &mut Vec<(String, String)>);

    fn validate(&self) -> Result<()> {
        Ok(())
    }

    /// Defaults overridden by whatever `prefix.*` keys are present.
    fn from_kv(kv: &mut KvMap, prefix: &str) -> Result<Self> {
        let mut c = Self::default();
        c.read_fields(kv, prefix)?;
        c.validate()?;
        Ok(c)
    }

    /// Parses a standalone file holding only this section.
    fn from_kv_str(text: &str, prefix: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text)?;
        let c = Self::from_kv(&mut kv, prefix)?;
        kv.finish()?;
        Ok(c)
    }

    fn to_kv_string(&self, prefix: &str) -> String {
        let mut out = Vec::new();
        self.write_fields(prefix, &mut out);
        let mut s = String::new();
        for (k, v) in out {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

pub(crate) fn read_field<T: KvValue>(kv: &mut KvMap, key: String, slot: &mut T) -> Result<()> {
    if let Some(raw) = kv.take(&key) {
        *slot = T::parse_kv(&raw).map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
    }
    Ok(())
}

/// Implements [`KvSection`] field plumbing for a struct.
macro_rules! kv_section {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::config::KvSection for $ty {
            fn read_fields(
                &mut self,
                kv: &mut $crate::config::KvMap,
                prefix: &str,
            ) -> $crate::error::Result<()> {
                $( $crate::config::read_field(kv, format!("{prefix}{}", stringify!($field)), &mut self.$field)?; )*
                Ok(())
            }
            fn write_fields(&self, prefix: &str, out: &mut Vec<(String, String)>) {
                $( out.push((
                    format!("{prefix}{}", stringify!($field)),
                    $crate::config::KvValue::format_kv(&self.$field),
                )); )*
            }
            fn validate(&self) -> $crate::error::Result<()> {
                <$ty>::check(self)
            }
        }
    };
}
pub(crate) use kv_section;

/// Every section of a lab run, one file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabConfig {
    pub sim: SimConfig,
    pub collect: CollectConfig,
    pub ae: TrainConfig,
    pub dynamics: DynTrainConfig,
    pub cem: CemConfig,
    pub eval: EvalConfig,
    pub p: PGainSet,
    pub bench: BenchConfig,
}

impl LabConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text)?;
        let c = Self {
            sim: SimConfig::from_kv(&mut kv, "sim.")?,
            collect: CollectConfig::from_kv(&mut kv, "collect.")?,
            ae: TrainConfig::from_kv(&mut kv, "ae.")?,
            dynamics: DynTrainConfig::from_kv(&mut kv, "dyn.")?,
            cem: CemConfig::from_kv(&mut kv, "cem.")?,
            eval: EvalConfig::from_kv(&mut kv, "eval.")?,
            p: PGainSet::from_kv(&mut kv, "p.")?,
            bench: BenchConfig::from_kv(&mut kv, "bench.")?,
        };
        kv.finish()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        s += &self.sim.to_kv_string("sim.");
        s += &self.collect.to_kv_string("collect.");
        s += &self.ae.to_kv_string("ae.");
        s += &self.dynamics.to_kv_string("dyn.");
        s += &self.cem.to_kv_string("cem.");
        s += &self.eval.to_kv_string("eval.");
        s += &self.p.to_kv_string("p.");
        s += &self.bench.to_kv_string("bench.");
        s
    }
}

/// Hex SHA-256 prefix of a canonical config serialization.
pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

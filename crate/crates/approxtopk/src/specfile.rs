//! Flat `key=value` files for hardware specs and kernel profiles.
//!
//! One entry per line; blank lines and lines starting with `#` are ignored.
//! Hardware keys: `name`, `pi_tflops`, `beta_gbps`, `gamma_tcops`. Profile
//! keys: `m`, `n`, `d`, `l`, `ib`, `c`, `lambda`, plus an optional `name`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use approxtopk_core::roofline::{HardwareSpec, KernelProfile};

use crate::error::{Error, Result};

/// Bundled hardware files, by short name.
pub const BUNDLED_HARDWARE: [(&str, &str); 4] = [
    ("gpu_v100", include_str!("../specs/gpu_v100.hw")),
    ("gpu_a100", include_str!("../specs/gpu_a100.hw")),
    ("tpu_v3", include_str!("../specs/tpu_v3.hw")),
    ("tpu_v4", include_str!("../specs/tpu_v4.hw")),
];

/// Bundled kernel profiles of the two reference benchmarks.
pub const BUNDLED_PROFILES: [(&str, &str); 2] = [
    ("glove", include_str!("../specs/glove.profile")),
    ("sift", include_str!("../specs/sift.profile")),
];

struct Entries {
    map: BTreeMap<String, (String, u64)>,
}

impl Entries {
    fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let here = offset;
            offset += line.len() as u64;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::format(here, format!("expected key=value, got `{trimmed}`")))?;
            let key = key.trim();
            if !allowed.contains(&key) {
                return Err(Error::format(here, format!("unknown key `{key}`")));
            }
            if map.insert(key.to_string(), (value.trim().to_string(), here)).is_some() {
                return Err(Error::format(here, format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { map })
    }

    fn text(&self, key: &str) -> Result<&str> {
        self.map
            .get(key)
            .map(|(v, _)| v.as_str())
            .ok_or_else(|| Error::format(0, format!("missing key `{key}`")))
    }

    fn number<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (v, at) = self
            .map
            .get(key)
            .ok_or_else(|| Error::format(0, format!("missing key `{key}`")))?;
        v.parse()
            .map_err(|_| Error::format(*at, format!("`{key}` is not a valid number: `{v}`")))
    }
}

pub fn parse_hardware(text: &str) -> Result<HardwareSpec> {
    let e = Entries::parse(text, &["name", "pi_tflops", "beta_gbps", "gamma_tcops"])?;
    HardwareSpec::from_units(
        e.text("name")?,
        e.number("pi_tflops")?,
        e.number("beta_gbps")?,
        e.number("gamma_tcops")?,
    )
    .map_err(|err| Error::format(0, err.to_string()))
}

pub fn format_hardware(hw: &HardwareSpec) -> String {
    let mut s = String::new();
    writeln!(s, "name={}", hw.name).unwrap();
    writeln!(s, "pi_tflops={}", hw.pi / 1e12).unwrap();
    writeln!(s, "beta_gbps={}", hw.beta / 1e9).unwrap();
    writeln!(s, "gamma_tcops={}", hw.gamma / 1e12).unwrap();
    s
}

/// A kernel profile with the label used in reports.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedProfile {
    pub name: String,
    pub profile: KernelProfile,
}

pub fn parse_profile(text: &str) -> Result<NamedProfile> {
    let e = Entries::parse(text, &["name", "m", "n", "d", "l", "ib", "c", "lambda"])?;
    let profile = KernelProfile {
        m: e.number("m")?,
        n: e.number("n")?,
        d: e.number("d")?,
        l: e.number("l")?,
        ib: e.number("ib")?,
        c: e.number("c")?,
        lambda: e.number("lambda")?,
    };
    profile.validate().map_err(|err| Error::format(0, err.to_string()))?;
    Ok(NamedProfile {
        name: e.text("name").unwrap_or("profile").to_string(),
        profile,
    })
}

pub fn format_profile(p: &NamedProfile) -> String {
    let k = &p.profile;
    format!(
        "name={}\nm={}\nn={}\nd={}\nl={}\nib={}\nc={}\nlambda={}\n",
        p.name, k.m, k.n, k.d, k.l, k.ib, k.c, k.lambda
    )
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a hardware spec from a file, or a bundled one by short name.
pub fn load_hardware(source: &str) -> Result<HardwareSpec> {
    match BUNDLED_HARDWARE.iter().find(|(n, _)| *n == source) {
        Some((_, text)) => parse_hardware(text),
        None => parse_hardware(&read(Path::new(source))?),
    }
}

/// Loads a kernel profile from a file, or a bundled one by short name.
pub fn load_profile(source: &str) -> Result<NamedProfile> {
    match BUNDLED_PROFILES.iter().find(|(n, _)| *n == source) {
        Some((_, text)) => parse_profile(text),
        None => parse_profile(&read(Path::new(source))?),
    }
}

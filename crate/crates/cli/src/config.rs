//! Sectioned `key = value` configuration files.
//!
//! The format is deliberately flat: a file is a sequence of `[section]`
//! headers, `key = value` lines, blank lines, and `#` comment lines.  Every
//! section and key is checked against a fixed schema; unknown names,
//! duplicate keys, and malformed lines are rejected with the offending line
//! number so mistakes surface immediately instead of silently falling back
//! to defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use anyhow::{bail, Result};

/// Every recognised section with the keys it accepts.
const SCHEMA: &[(&str, &[&str])] = &[
    ("patch", &["n", "a", "big_n", "cos_ell"]),
    ("schedule", &["delta_t", "q", "t_end", "dt_micro"]),
    ("sweep", &["n_min", "n_max", "a_list", "cos_ell_list", "delta_t_list", "q_list"]),
    (
        "gl",
        &[
            "alpha",
            "beta",
            "gamma",
            "domain_width",
            "h",
            "big_h",
            "n",
            "delta_t",
            "dt_micro",
            "t_end",
            "seed",
            "init_amplitude",
            "noise_std",
            "as_printed",
            "mode",
            "snapshot_times",
        ],
    ),
    ("comms", &["topology", "patches", "payload", "cadence", "delta_t", "dt_micro", "t_end"]),
    ("output", &["dir"]),
];

fn section_keys(section: &str) -> Option<&'static [&'static str]> {
    SCHEMA.iter().find(|(name, _)| *name == section).map(|(_, keys)| *keys)
}

/// A parsed configuration file: raw string values indexed by
/// `(section, key)`, each remembering the line it came from so typed getters
/// can point at the exact location of a bad value.
#[derive(Debug, Default)]
pub struct FileConfig {
    entries: BTreeMap<(String, String), (String, usize)>,
    source: String,
}

impl FileConfig {
    /// Parses `text`, using `source` (normally the file path) in messages.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut current: Option<String> = None;

        for (index, raw_line) in text.lines().enumerate() {
            let lineno = index + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }

            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    bail!("{source}:{lineno}: malformed section header `{line}`");
                };
                let name = name.trim();
                if section_keys(name).is_none() {
                    let known: Vec<&str> = SCHEMA.iter().map(|(s, _)| *s).collect();
                    bail!(
                        "{source}:{lineno}: unknown section `[{name}]` (known sections: {})",
                        known.join(", ")
                    );
                }
                current = Some(name.to_string());
                continue;
            }

            let Some((key, value)) = line.split_once('=') else {
                bail!("{source}:{lineno}: expected `key = value` or `[section]`, got `{line}`");
            };
            let key = key.trim();
            let value = value.trim();
            let Some(section) = current.as_deref() else {
                bail!("{source}:{lineno}: key `{key}` appears before any `[section]` header");
            };
            let allowed = section_keys(section).expect("current section is always known");
            if !allowed.contains(&key) {
                bail!(
                    "{source}:{lineno}: unknown key `{key}` in section `[{section}]` \
                     (accepted keys: {})",
                    allowed.join(", ")
                );
            }
            if value.is_empty() {
                bail!("{source}:{lineno}: empty value for key `{key}` in section `[{section}]`");
            }
            let map_key = (section.to_string(), key.to_string());
            if let Some((_, first)) = entries.get(&map_key) {
                bail!(
                    "{source}:{lineno}: duplicate key `{key}` in section `[{section}]` \
                     (first set on line {first})"
                );
            }
            entries.insert(map_key, (value.to_string(), lineno));
        }

        Ok(Self { entries, source: source.to_string() })
    }

    fn raw(&self, section: &str, key: &str) -> Option<&(String, usize)> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    /// Typed lookup; `Ok(None)` when the key is absent, a line-numbered error
    /// when present but unparseable.
    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let Some((value, lineno)) = self.raw(section, key) else {
            return Ok(None);
        };
        match value.parse::<T>() {
            Ok(parsed) => Ok(Some(parsed)),
            Err(err) => bail!(
                "{}:{lineno}: bad value `{value}` for `[{section}] {key}`: {err}",
                self.source
            ),
        }
    }

    /// Like [`get`](Self::get) but runs a custom parser, so enumerated
    /// string values also report their line on failure.
    pub fn get_map<T>(
        &self,
        section: &str,
        key: &str,
        parse: impl FnOnce(&str) -> Result<T>,
    ) -> Result<Option<T>> {
        let Some((value, lineno)) = self.raw(section, key) else {
            return Ok(None);
        };
        match parse(value) {
            Ok(parsed) => Ok(Some(parsed)),
            Err(err) => bail!(
                "{}:{lineno}: bad value `{value}` for `[{section}] {key}`: {err:#}",
                self.source
            ),
        }
    }

    /// Comma-separated list lookup with the same error conventions.
    pub fn get_list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        self.get_map(section, key, parse_list)
    }
}

/// Parses a comma-separated list, rejecting empty items.
pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    let mut items = Vec::new();
    for piece in text.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            bail!("empty item in list `{text}`");
        }
        match piece.parse::<T>() {
            Ok(item) => items.push(item),
            Err(err) => bail!("bad list item `{piece}`: {err}"),
        }
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_well_formed_file_round_trips_typed_values() {
        let text = "\n# comment\n[patch]\nn = 20\ncos_ell = 0.91\n\n[gl]\nas_printed = true\nsnapshot_times = 0.04, 0.4\n";
        let cfg = FileConfig::parse(text, "test.cfg").unwrap();
        assert_eq!(cfg.get::<usize>("patch", "n").unwrap(), Some(20));
        assert_eq!(cfg.get::<f64>("patch", "cos_ell").unwrap(), Some(0.91));
        assert_eq!(cfg.get::<bool>("gl", "as_printed").unwrap(), Some(true));
        assert_eq!(cfg.get_list::<f64>("gl", "snapshot_times").unwrap(), Some(vec![0.04, 0.4]));
        assert_eq!(cfg.get::<usize>("patch", "a").unwrap(), None);
    }

    #[test]
    fn unknown_sections_keys_and_duplicates_are_line_numbered() {
        let bad_section = FileConfig::parse("[nope]\n", "f").unwrap_err().to_string();
        assert!(bad_section.contains("f:1"), "{bad_section}");
        assert!(bad_section.contains("unknown section"), "{bad_section}");

        let bad_key = FileConfig::parse("[patch]\nwidth = 3\n", "f").unwrap_err().to_string();
        assert!(bad_key.contains("f:2"), "{bad_key}");
        assert!(bad_key.contains("unknown key `width`"), "{bad_key}");

        let dup = FileConfig::parse("[patch]\nn = 3\nn = 4\n", "f").unwrap_err().to_string();
        assert!(dup.contains("f:3"), "{dup}");
        assert!(dup.contains("duplicate key"), "{dup}");

        let orphan = FileConfig::parse("n = 3\n", "f").unwrap_err().to_string();
        assert!(orphan.contains("before any `[section]`"), "{orphan}");

        let broken = FileConfig::parse("[patch]\njust words\n", "f").unwrap_err().to_string();
        assert!(broken.contains("expected `key = value`"), "{broken}");
    }

    #[test]
    fn bad_typed_values_point_at_their_line() {
        let cfg = FileConfig::parse("[patch]\nn = many\n", "f").unwrap();
        let err = cfg.get::<usize>("patch", "n").unwrap_err().to_string();
        assert!(err.contains("f:2"), "{err}");
        assert!(err.contains("bad value `many`"), "{err}");

        let cfg = FileConfig::parse("[gl]\nsnapshot_times = 0.1,,0.2\n", "f").unwrap();
        let err = cfg.get_list::<f64>("gl", "snapshot_times").unwrap_err().to_string();
        assert!(err.contains("f:2"), "{err}");
        assert!(err.contains("empty item"), "{err}");
    }
}

//! Effective training settings assembled from defaults, a `key = value`
//! config file and command-line overrides, each value tagged with where it
//! came from. Later layers win: flag over file over default.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{AttentionKind, NetworkConfig, Placement};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    ConfigFile,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::ConfigFile => "config-file",
            Source::Flag => "flag",
        })
    }
}

/// Value `auto` leaves a width setting to the preset.
const AUTO: &str = "auto";

fn defaults() -> Vec<(&'static str, String)> {
    let t = TrainConfig::default();
    let n = NetworkConfig::default();
    vec![
        ("preset", "full".into()),
        ("beta", n.beta.to_string()),
        ("k", n.k.to_string()),
        ("fe_channels", AUTO.into()),
        ("afe1_centroids", AUTO.into()),
        ("afe1_group", AUTO.into()),
        ("afe1_channels", AUTO.into()),
        ("afe2_centroids", AUTO.into()),
        ("afe2_group", AUTO.into()),
        ("afe2_channels", AUTO.into()),
        ("head_widths", AUTO.into()),
        ("dropout", AUTO.into()),
        ("radius_classification", n.radius_classification.to_string()),
        ("radius_prediction", n.radius_prediction.to_string()),
        ("attention", n.attention.to_string()),
        ("placement", n.placement.to_string()),
        ("fe_attention", n.fe_attention.to_string()),
        ("batch_train", t.batch_train.to_string()),
        ("batch_test", t.batch_test.to_string()),
        ("epochs", t.epochs.to_string()),
        ("lr_classification", t.lr_classification.to_string()),
        ("step_classification", t.step_classification.to_string()),
        ("lr_prediction", t.lr_prediction.to_string()),
        ("step_prediction", t.step_prediction.to_string()),
        ("gamma", t.gamma.to_string()),
        ("seed", t.seed.to_string()),
        ("freeze_trunk", t.freeze_trunk.to_string()),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, (String, Source)>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: defaults()
                .into_iter()
                .map(|(k, v)| (k.to_string(), (v, Source::Default)))
                .collect(),
        }
    }
}

impl Settings {
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn get(&self, key: &str) -> Option<(&str, Source)> {
        self.values.get(key).map(|(v, s)| (v.as_str(), *s))
    }

    pub fn set(&mut self, key: &str, value: &str, source: Source) -> Result<()> {
        let slot = self
            .values
            .get_mut(key)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown setting `{key}`")))?;
        *slot = (value.trim().to_string(), source);
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v, Source::ConfigFile)?;
        }
        Ok(())
    }

    /// Applies a `key=value` override given on the command line.
    pub fn apply_flag(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("`{assignment}` is not key=value")))?;
        self.set(k.trim(), v, Source::Flag)
    }

    fn raw(&self, key: &str) -> &str {
        &self.values[key].0
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        self.raw(key)
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad value `{}` for `{key}`", self.raw(key))))
    }

    fn parse_auto<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        if self.raw(key) == AUTO {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    fn list_auto(&self, key: &str) -> Result<Option<Vec<usize>>> {
        if self.raw(key) == AUTO {
            return Ok(None);
        }
        self.raw(key)
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad list `{}` for `{key}`", self.raw(key))))
            })
            .collect::<Result<Vec<usize>>>()
            .map(Some)
    }

    pub fn network(&self) -> Result<NetworkConfig> {
        let beta: usize = self.parse("beta")?;
        let k: usize = self.parse("k")?;
        let mut n = match self.raw("preset") {
            "full" => NetworkConfig { beta, k, ..NetworkConfig::default() },
            "tiny" => NetworkConfig::tiny(beta, k),
            other => return Err(Error::InvalidConfig(format!("unknown preset `{other}` (full or tiny)"))),
        };
        if let Some(v) = self.list_auto("fe_channels")? {
            n.fe_channels = v;
        }
        if let Some(v) = self.parse_auto("afe1_centroids")? {
            n.afe1.n_centroids = v;
        }
        if let Some(v) = self.parse_auto("afe1_group")? {
            n.afe1.k_group = v;
        }
        if let Some(v) = self.list_auto("afe1_channels")? {
            n.afe1.channels = v;
        }
        if let Some(v) = self.parse_auto("afe2_centroids")? {
            n.afe2.n_centroids = v;
        }
        if let Some(v) = self.parse_auto("afe2_group")? {
            n.afe2.k_group = v;
        }
        if let Some(v) = self.list_auto("afe2_channels")? {
            n.afe2.channels = v;
        }
        if let Some(v) = self.list_auto("head_widths")? {
            n.head_widths = v;
        }
        if let Some(v) = self.parse_auto("dropout")? {
            n.dropout = v;
        }
        n.radius_classification = self.parse("radius_classification")?;
        n.radius_prediction = self.parse("radius_prediction")?;
        n.attention = self.raw("attention").parse::<AttentionKind>()?;
        n.placement = self.raw("placement").parse::<Placement>()?;
        n.fe_attention = self.raw("fe_attention").parse::<AttentionKind>()?;
        n.validate()?;
        Ok(n)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            batch_train: self.parse("batch_train")?,
            batch_test: self.parse("batch_test")?,
            epochs: self.parse("epochs")?,
            lr_classification: self.parse("lr_classification")?,
            step_classification: self.parse("step_classification")?,
            lr_prediction: self.parse("lr_prediction")?,
            step_prediction: self.parse("step_prediction")?,
            gamma: self.parse("gamma")?,
            seed: self.parse("seed")?,
            freeze_trunk: self.parse("freeze_trunk")?,
        };
        t.validate()?;
        Ok(t)
    }

    /// One `key = value  # source` line per setting, sorted by key.
    pub fn render(&self) -> String {
        self.values
            .iter()
            .map(|(k, (v, s))| format!("{k} = {v}  # {s}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_the_reference_network() {
        let s = Settings::default();
        assert_eq!(s.network().unwrap(), NetworkConfig::default());
        assert_eq!(s.train().unwrap(), TrainConfig::default());
        assert!(s.keys().all(|k| s.get(k).unwrap().1 == Source::Default));
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut s = Settings::default();
        s.apply_file("# comment\nepochs = 7\nseed=3 # trailing\n\nattention = cse\n").unwrap();
        s.apply_flag("seed=11").unwrap();
        assert_eq!(s.get("epochs"), Some(("7", Source::ConfigFile)));
        assert_eq!(s.get("seed"), Some(("11", Source::Flag)));
        assert_eq!(s.get("gamma").unwrap().1, Source::Default);
        let t = s.train().unwrap();
        assert_eq!((t.epochs, t.seed), (7, 11));
        assert_eq!(s.network().unwrap().attention, AttentionKind::Cse);
        assert!(s.render().contains("seed = 11  # flag\n"));
        assert!(s.render().contains("epochs = 7  # config-file\n"));
    }

    #[test]
    fn tiny_preset_and_overrides() {
        let mut s = Settings::default();
        for a in ["preset=tiny", "beta=32", "k=8", "afe1_channels=24,48", "placement=E"] {
            s.apply_flag(a).unwrap();
        }
        let n = s.network().unwrap();
        assert_eq!(n.afe1.channels, vec![24, 48]);
        assert_eq!(n.fe_channels, NetworkConfig::tiny(32, 8).fe_channels);
        assert_eq!(n.placement, Placement::E);
    }

    #[test]
    fn bad_input_is_rejected() {
        let mut s = Settings::default();
        assert!(s.apply_flag("nonsense=1").is_err());
        assert!(s.apply_file("epochs 3").is_err());
        s.apply_flag("epochs=abc").unwrap();
        assert!(s.train().is_err());
        let mut s = Settings::default();
        s.apply_flag("preset=huge").unwrap();
        assert!(s.network().is_err());
    }
}

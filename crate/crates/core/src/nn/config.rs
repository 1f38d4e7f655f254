//! Network hyperparameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::attention::AttentionKind;
use crate::error::{Error, Result};

pub const DEFAULT_RADIUS_CLASSIFICATION: f64 = 0.4;
pub const DEFAULT_RADIUS_PREDICTION: f64 = 0.35;

/// Which head is being run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Prediction,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Prediction => "prediction",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "cls" => Ok(Task::Classification),
            "prediction" | "reg" => Ok(Task::Prediction),
            _ => Err(Error::InvalidConfig(format!("unknown stage `{s}`"))),
        }
    }
}

/// Where attention sits inside the two AFE stages.
///
/// * `A`: after the last conv+BN of both stages, before ReLU.
/// * `B`: after the last ReLU of both stages.
/// * `C`: as `A`, first stage only.
/// * `D`: as `A`, second stage only.
/// * `E`: after conv+BN of the last two layers of both stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Placement {
    A,
    B,
    C,
    D,
    E,
}

impl Placement {
    pub const ALL: [Placement; 5] = [Placement::A, Placement::B, Placement::C, Placement::D, Placement::E];
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::A => "a",
            Placement::B => "b",
            Placement::C => "c",
            Placement::D => "d",
            Placement::E => "e",
        })
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Placement::A),
            "b" => Ok(Placement::B),
            "c" => Ok(Placement::C),
            "d" => Ok(Placement::D),
            "e" => Ok(Placement::E),
            _ => Err(Error::InvalidConfig(format!("unknown placement `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfeConfig {
    pub n_centroids: usize,
    pub k_group: usize,
    /// Output widths; the input width is `3 + previous width`.
    pub channels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnSlot {
    AfterBn,
    AfterRelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub beta: usize,
    pub k: usize,
    /// FE output widths; input width is 6 (local xyz + rgb).
    pub fe_channels: Vec<usize>,
    pub afe1: AfeConfig,
    pub afe2: AfeConfig,
    pub radius_classification: f64,
    pub radius_prediction: f64,
    pub attention: AttentionKind,
    pub placement: Placement,
    /// Attention after the last conv+BN of FE.
    pub fe_attention: AttentionKind,
    /// Hidden widths of both heads.
    pub head_widths: Vec<usize>,
    pub dropout: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            beta: 1024,
            k: 16,
            fe_channels: vec![64, 64, 128],
            afe1: AfeConfig {
                n_centroids: 512,
                k_group: 32,
                channels: vec![128, 128, 256],
            },
            afe2: AfeConfig {
                n_centroids: 128,
                k_group: 64,
                channels: vec![256, 512, 1024],
            },
            radius_classification: DEFAULT_RADIUS_CLASSIFICATION,
            radius_prediction: DEFAULT_RADIUS_PREDICTION,
            attention: AttentionKind::Scse,
            placement: Placement::A,
            fe_attention: AttentionKind::None,
            head_widths: vec![512, 256],
            dropout: 0.4,
        }
    }
}

impl NetworkConfig {
    /// Small widths for tests and desk-scale experiments.
    pub fn tiny(beta: usize, k: usize) -> Self {
        let n1 = (beta / 2).max(1);
        let n2 = (beta / 8).max(1);
        Self {
            beta,
            k,
            fe_channels: vec![16, 32],
            afe1: AfeConfig {
                n_centroids: n1,
                k_group: 8.min(beta),
                channels: vec![32, 64],
            },
            afe2: AfeConfig {
                n_centroids: n2,
                k_group: 8.min(n1),
                channels: vec![64, 128],
            },
            head_widths: vec![64, 32],
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn radius(&self, task: Task) -> f64 {
        match task {
            Task::Classification => self.radius_classification,
            Task::Prediction => self.radius_prediction,
        }
    }

    /// Attention slots for layer `layer` of `n` in AFE stage `stage` (1 or 2).
    pub fn afe_slots(&self, stage: usize, layer: usize, n: usize) -> Vec<AttnSlot> {
        if self.attention == AttentionKind::None {
            return Vec::new();
        }
        let last = layer + 1 == n;
        let active = match self.placement {
            Placement::C => stage == 1,
            Placement::D => stage == 2,
            _ => true,
        };
        if !active {
            return Vec::new();
        }
        match self.placement {
            Placement::A | Placement::C | Placement::D if last => vec![AttnSlot::AfterBn],
            Placement::B if last => vec![AttnSlot::AfterRelu],
            Placement::E if layer + 2 >= n => vec![AttnSlot::AfterBn],
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.beta == 0 || self.k == 0 {
            return bad("beta and k must be positive".into());
        }
        for (name, ch) in [
            ("fe", &self.fe_channels),
            ("afe1", &self.afe1.channels),
            ("afe2", &self.afe2.channels),
        ] {
            if ch.is_empty() || ch.contains(&0) {
                return bad(format!("{name} channel list must be non-empty and positive"));
            }
        }
        if self.head_widths.contains(&0) {
            return bad("head widths must be positive".into());
        }
        for r in [self.radius_classification, self.radius_prediction] {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("radius {r} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.afe1.n_centroids == 0 || self.afe1.n_centroids > self.beta {
            return Err(Error::NTooLarge {
                n: self.afe1.n_centroids,
                m: self.beta,
            });
        }
        if self.afe2.n_centroids == 0 || self.afe2.n_centroids > self.afe1.n_centroids {
            return Err(Error::NTooLarge {
                n: self.afe2.n_centroids,
                m: self.afe1.n_centroids,
            });
        }
        if self.afe1.k_group == 0 || self.afe2.k_group == 0 {
            return bad("k_group must be positive".into());
        }
        if self.fe_attention.has_channel() && self.fe_channels.last().unwrap() % 2 != 0 {
            return Err(Error::OddChannelCount(*self.fe_channels.last().unwrap()));
        }
        if self.attention.has_channel() {
            for (stage, afe) in [(1, &self.afe1), (2, &self.afe2)] {
                let n = afe.channels.len();
                for (l, &c) in afe.channels.iter().enumerate() {
                    if !self.afe_slots(stage, l, n).is_empty() && c % 2 != 0 {
                        return Err(Error::OddChannelCount(c));
                    }
                }
            }
        }
        Ok(())
    }

    /// Fields that fix the trunk's parameter shapes and grouping.
    pub fn trunk_mismatch(&self, other: &NetworkConfig) -> Option<String> {
        let checks: [(&str, bool); 8] = [
            ("beta", self.beta == other.beta),
            ("k", self.k == other.k),
            ("fe_channels", self.fe_channels == other.fe_channels),
            ("afe1", self.afe1 == other.afe1),
            ("afe2", self.afe2 == other.afe2),
            ("attention", self.attention == other.attention),
            ("placement", self.placement == other.placement),
            ("fe_attention", self.fe_attention == other.fe_attention),
        ];
        let diff: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
        (!diff.is_empty()).then(|| format!("trunk fields differ: {}", diff.join(", ")))
    }

    /// One-line description used in training logs.
    pub fn describe(&self) -> String {
        format!(
            "beta={} k={} fe={:?} afe1={}x{}:{:?} afe2={}x{}:{:?} r_cls={} r_pred={} attention={} placement={} fe_attention={} head={:?} dropout={}",
            self.beta,
            self.k,
            self.fe_channels,
            self.afe1.n_centroids,
            self.afe1.k_group,
            self.afe1.channels,
            self.afe2.n_centroids,
            self.afe2.k_group,
            self.afe2.channels,
            self.radius_classification,
            self.radius_prediction,
            self.attention,
            self.placement,
            self.fe_attention,
            self.head_widths,
            self.dropout
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        NetworkConfig::default().validate().unwrap();
        NetworkConfig::tiny(8, 4).validate().unwrap();
        let d = NetworkConfig::default();
        assert_eq!(d.radius(Task::Classification), 0.4);
        assert_eq!(d.radius(Task::Prediction), 0.35);
    }

    #[test]
    fn placements_map_to_slots() {
        let mut c = NetworkConfig::default();
        assert_eq!(c.afe_slots(1, 2, 3), vec![AttnSlot::AfterBn]);
        assert!(c.afe_slots(1, 1, 3).is_empty());
        c.placement = Placement::B;
        assert_eq!(c.afe_slots(2, 2, 3), vec![AttnSlot::AfterRelu]);
        c.placement = Placement::C;
        assert!(c.afe_slots(2, 2, 3).is_empty());
        assert_eq!(c.afe_slots(1, 2, 3), vec![AttnSlot::AfterBn]);
        c.placement = Placement::D;
        assert!(c.afe_slots(1, 2, 3).is_empty());
        c.placement = Placement::E;
        assert_eq!(c.afe_slots(1, 1, 3), vec![AttnSlot::AfterBn]);
        assert!(c.afe_slots(1, 0, 3).is_empty());
        c.attention = AttentionKind::None;
        assert!(c.afe_slots(1, 2, 3).is_empty());
    }

    #[test]
    fn invalid_configs() {
        let mut c = NetworkConfig::tiny(8, 4);
        c.afe1.channels = vec![];
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::tiny(8, 4);
        c.afe2.channels = vec![5];
        assert!(matches!(c.validate(), Err(Error::OddChannelCount(5))));
        let mut c = NetworkConfig::tiny(8, 4);
        c.radius_prediction = 0.0;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::tiny(8, 4);
        c.afe1.n_centroids = 9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn trunk_mismatch_ignores_heads_and_radius() {
        let a = NetworkConfig::tiny(8, 4);
        let mut b = a.clone();
        b.radius_prediction = 0.3;
        b.head_widths = vec![7];
        b.dropout = 0.2;
        assert!(a.trunk_mismatch(&b).is_none());
        b.fe_channels = vec![8];
        assert!(a.trunk_mismatch(&b).unwrap().contains("fe_channels"));
    }
}

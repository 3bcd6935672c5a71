use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::seed::fnv1a64;

pub const RAW: Range<usize> = 0..6;
pub const ENGINEERED: Range<usize> = 6..15;
pub const CYCLICAL: Range<usize> = 15..21;
/// Past NDVI; present on history tokens only, as their last channel.
pub const TARGET_CHANNEL: usize = 21;
pub const FUTURE_WIDTH: usize = 21;
pub const HISTORY_WIDTH: usize = 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureRole {
    RawWeather,
    Engineered,
    Cyclical,
    Target,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    /// History token channels in order; future tokens use every channel
    /// except the trailing target.
    pub features: Vec<(String, FeatureRole)>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::standard()
    }
}

impl FeatureSchema {
    pub fn standard() -> Self {
        let raw = ["wind", "humidity", "radiation", "rainfall", "pressure", "temperature"];
        let engineered = [
            "rain_bt",
            "cold_bt",
            "hot_bt",
            "rain_roll7",
            "cold_roll7",
            "hot_roll7",
            "rain_roll14",
            "cold_roll14",
            "hot_roll14",
        ];
        let cyclical = ["doy_sin1", "doy_cos1", "doy_sin2", "doy_cos2", "doy_sin3", "doy_cos3"];
        let mut features = Vec::with_capacity(HISTORY_WIDTH);
        features.extend(raw.iter().map(|n| (n.to_string(), FeatureRole::RawWeather)));
        features.extend(engineered.iter().map(|n| (n.to_string(), FeatureRole::Engineered)));
        features.extend(cyclical.iter().map(|n| (n.to_string(), FeatureRole::Cyclical)));
        features.push(("ndvi".to_string(), FeatureRole::Target));
        Self { features }
    }

    pub fn history_width(&self) -> usize {
        self.features.len()
    }

    pub fn future_width(&self) -> usize {
        self.features.iter().filter(|(_, r)| *r != FeatureRole::Target).count()
    }

    pub fn channels(&self, role: FeatureRole) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, (_, r))| *r == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|(n, _)| n.as_str()).collect()
    }
}

/// FNV-1a over the channel names and roles plus the window geometry. Samples,
/// scalers and checkpoints built under different schemas never share a hash.
pub fn schema_hash(schema: &FeatureSchema, history_len: usize, horizon: usize) -> u64 {
    let mut text = String::from("sqf-schema-v1");
    for (name, role) in &schema.features {
        text.push_str(&format!("|{name}:{role:?}"));
    }
    text.push_str(&format!("|p={history_len}|h={horizon}"));
    fnv1a64(text.as_bytes())
}

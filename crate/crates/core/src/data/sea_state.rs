use serde::{Deserialize, Serialize};

/// Number of sea-state classes used for ship-motion data.
pub const SEA_STATE_CLASSES: usize = 5;

/// Occurrence statistics region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Worldwide,
    NorthAtlantic,
}

/// One retained sea-state class.
#[derive(Clone, Debug, PartialEq)]
pub struct SeaStateSpec {
    pub class_id: usize,
    /// Raw sea-state codes grouped into this class.
    pub source_states: Vec<u8>,
    /// Significant wave height band `[low, high)` in meters.
    pub wave_height_band: (f64, f64),
    /// Prior probability, renormalized over the retained classes.
    pub prior: f64,
}

impl SeaStateSpec {
    /// Amplitude scale used by the synthesizer: the band midpoint.
    pub fn amplitude(&self) -> f64 {
        0.5 * (self.wave_height_band.0 + self.wave_height_band.1)
    }
}

const BANDS: [(f64, f64); SEA_STATE_CLASSES] = [(0.0, 0.5), (0.5, 1.25), (1.25, 2.5), (2.5, 4.0), (4.0, 6.0)];

const SOURCE_STATES: [&[u8]; SEA_STATE_CLASSES] = [&[0, 1, 2], &[3], &[4], &[5], &[6]];

/// Occurrence probabilities in percent, as tabulated (codes 1, 3, 4, 5, 6).
pub const WORLDWIDE_RAW: [f64; SEA_STATE_CLASSES] = [11.2486, 31.6851, 40.1944, 12.8005, 3.0253];
pub const NORTH_ATLANTIC_RAW: [f64; SEA_STATE_CLASSES] = [8.3103, 28.1996, 42.0273, 15.4435, 4.2938];

impl Region {
    pub fn raw_priors(self) -> [f64; SEA_STATE_CLASSES] {
        match self {
            Region::Worldwide => WORLDWIDE_RAW,
            Region::NorthAtlantic => NORTH_ATLANTIC_RAW,
        }
    }

    /// Raw priors divided by their sum (states 7–9 are dropped).
    pub fn priors(self) -> [f64; SEA_STATE_CLASSES] {
        let raw = self.raw_priors();
        let total: f64 = raw.iter().sum();
        raw.map(|p| p / total)
    }

    pub fn classes(self) -> Vec<SeaStateSpec> {
        let priors = self.priors();
        (0..SEA_STATE_CLASSES)
            .map(|i| SeaStateSpec {
                class_id: i + 1,
                source_states: SOURCE_STATES[i].to_vec(),
                wave_height_band: BANDS[i],
                prior: priors[i],
            })
            .collect()
    }
}

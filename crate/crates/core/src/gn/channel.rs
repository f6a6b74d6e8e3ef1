use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Modulation label carried as metadata. It never enters the noise model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "16QAM")]
    Qam16,
    #[serde(rename = "32QAM")]
    Qam32,
    #[serde(rename = "64QAM")]
    Qam64,
    /// Shaped ASE noise loading a slot (experimental grid).
    #[serde(rename = "ASE")]
    Ase,
}

impl Modulation {
    pub const FORMATS: [Modulation; 4] = [Modulation::Qpsk, Modulation::Qam16, Modulation::Qam32, Modulation::Qam64];
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modulation::Qpsk => "QPSK",
            Modulation::Qam16 => "16QAM",
            Modulation::Qam32 => "32QAM",
            Modulation::Qam64 => "64QAM",
            Modulation::Ase => "ASE",
        };
        f.write_str(s)
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "QPSK" => Ok(Modulation::Qpsk),
            "16QAM" => Ok(Modulation::Qam16),
            "32QAM" => Ok(Modulation::Qam32),
            "64QAM" => Ok(Modulation::Qam64),
            "ASE" => Ok(Modulation::Ase),
            other => Err(Error::InvalidArgument(format!("unknown modulation `{other}`"))),
        }
    }
}

/// Symbol rate used to reference launch powers under the constant-PSD policy.
pub const REFERENCE_SYMBOL_RATE_GBD: f64 = 35.0;

pub fn dbm_to_w(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn w_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// One channel with a rectangular PSD whose width equals the symbol rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub center_freq_thz: f64,
    pub symbol_rate_gbd: f64,
    pub launch_power_dbm: f64,
    pub is_cut: bool,
    pub modulation: Modulation,
}

impl ChannelSpec {
    pub fn bandwidth_hz(&self) -> f64 {
        self.symbol_rate_gbd * 1e9
    }

    pub fn center_hz(&self) -> f64 {
        self.center_freq_thz * 1e12
    }

    pub fn lower_edge_thz(&self) -> f64 {
        self.center_freq_thz - 0.5 * self.symbol_rate_gbd * 1e-3
    }

    pub fn upper_edge_thz(&self) -> f64 {
        self.center_freq_thz + 0.5 * self.symbol_rate_gbd * 1e-3
    }

    pub fn power_w(&self) -> f64 {
        dbm_to_w(self.launch_power_dbm)
    }

    pub fn psd_w_per_hz(&self) -> f64 {
        self.power_w() / self.bandwidth_hz()
    }

    /// Launch power this channel's PSD would give a 35 GBd channel.
    pub fn reference_power_dbm(&self) -> f64 {
        self.launch_power_dbm - lin_to_db(self.symbol_rate_gbd / REFERENCE_SYMBOL_RATE_GBD)
    }
}

/// A channel plan over a band plus the on/off state of every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRealization {
    pub band_start_thz: f64,
    pub band_end_thz: f64,
    /// Sorted by center frequency.
    pub channels: Vec<ChannelSpec>,
    pub active_mask: Vec<bool>,
    pub cut_index: usize,
}

impl SpectrumRealization {
    pub fn band_width_thz(&self) -> f64 {
        self.band_end_thz - self.band_start_thz
    }

    pub fn cut(&self) -> &ChannelSpec {
        &self.channels[self.cut_index]
    }

    pub fn active_channels(&self) -> impl Iterator<Item = (usize, &ChannelSpec)> {
        self.channels
            .iter()
            .enumerate()
            .filter(move |(i, _)| self.active_mask[*i])
    }

    pub fn n_active(&self) -> usize {
        self.active_mask.iter().filter(|&&on| on).count()
    }

    /// Active bandwidth over band width.
    pub fn fill_fraction(&self) -> f64 {
        let active_ghz: f64 = self.active_channels().map(|(_, c)| c.symbol_rate_gbd).sum();
        active_ghz * 1e-3 / self.band_width_thz()
    }

    /// Same plan with every channel switched on.
    pub fn with_all_active(&self) -> Self {
        Self {
            active_mask: vec![true; self.channels.len()],
            ..self.clone()
        }
    }

    pub fn with_mask(&self, active_mask: Vec<bool>) -> Self {
        Self {
            active_mask,
            ..self.clone()
        }
    }

    /// Checks ordering and pairwise disjointness of channel supports.
    pub fn check_disjoint(&self) -> Result<()> {
        for (i, pair) in self.channels.windows(2).enumerate() {
            // Touching edges are allowed; a relative slack absorbs rounding.
            let slack = 1e-12 * pair[0].upper_edge_thz().abs();
            if pair[0].upper_edge_thz() > pair[1].lower_edge_thz() + slack {
                return Err(Error::OverlappingChannels {
                    first: i,
                    second: i + 1,
                });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::InvalidArgument("spectrum has no channels".into()));
        }
        if self.active_mask.len() != self.channels.len() {
            return Err(Error::InvalidArgument("active mask length differs from channel count".into()));
        }
        if self.cut_index >= self.channels.len() || !self.channels[self.cut_index].is_cut {
            return Err(Error::InvalidArgument("cut_index does not point at the channel under test".into()));
        }
        if !self.active_mask[self.cut_index] {
            return Err(Error::InvalidArgument("channel under test must be active".into()));
        }
        if self.channels.iter().filter(|c| c.is_cut).count() != 1 {
            return Err(Error::InvalidArgument("exactly one channel must be flagged as CUT".into()));
        }
        for c in &self.channels {
            if !(c.symbol_rate_gbd > 0.0) || !c.launch_power_dbm.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "channel at {} THz has invalid rate or power",
                    c.center_freq_thz
                )));
            }
        }
        let slack = 1e-9;
        let first = &self.channels[0];
        let last = &self.channels[self.channels.len() - 1];
        if first.lower_edge_thz() < self.band_start_thz - slack || last.upper_edge_thz() > self.band_end_thz + slack {
            return Err(Error::InvalidArgument("channel outside the band".into()));
        }
        self.check_disjoint()
    }
}

//! Full-band channel plans and random partial-load realizations.
//!
//! A partial load is always a mask over a full plan, so the current and the
//! fully loaded SNR of a realization share the same channel positions.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gn::lin_to_db;
pub use crate::gn::{ChannelSpec, Modulation, SpectrumRealization, REFERENCE_SYMBOL_RATE_GBD};
use crate::seed::rng_from_seed;

pub const MIN_SYMBOL_RATE_GBD: f64 = 35.0;
pub const MAX_SYMBOL_RATE_GBD: f64 = 69.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// Interferers of random symbol rate packed without guard bands.
    Flex,
    /// Fixed slots filled with ASE noise; the CUT sits in one slot.
    FixedSlots { slot_ghz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    pub band_start_thz: f64,
    pub band_end_thz: f64,
    pub granularity_ghz: f64,
    pub constant_psd: bool,
    /// Launch power of a 35 GBd channel in dBm.
    pub psd_anchor_dbm: f64,
    pub mode: GridMode,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self {
            band_start_thz: 191.3,
            band_end_thz: 196.1,
            granularity_ghz: 6.25,
            constant_psd: true,
            psd_anchor_dbm: 0.0,
            mode: GridMode::Flex,
        }
    }
}

impl GridPolicy {
    /// 50 GHz slots across the band, 95 ASE-loaded interferers plus the CUT.
    pub fn experimental(psd_anchor_dbm: f64) -> Self {
        Self {
            psd_anchor_dbm,
            mode: GridMode::FixedSlots { slot_ghz: 50.0 },
            ..Self::default()
        }
    }

    pub fn with_anchor(self, psd_anchor_dbm: f64) -> Self {
        Self { psd_anchor_dbm, ..self }
    }

    pub fn band_width_ghz(&self) -> f64 {
        (self.band_end_thz - self.band_start_thz) * 1e3
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.band_end_thz > self.band_start_thz) {
            return Err(Error::InvalidConfig("band end must exceed band start".into()));
        }
        if !(-3.0..=0.0).contains(&self.psd_anchor_dbm) {
            return Err(Error::InvalidConfig(format!(
                "psd_anchor_dbm = {} outside [-3, 0] dBm",
                self.psd_anchor_dbm
            )));
        }
        if !(self.granularity_ghz > 0.0) {
            return Err(Error::InvalidConfig("granularity_ghz must be positive".into()));
        }
        if let GridMode::FixedSlots { slot_ghz } = self.mode {
            if !(slot_ghz > 0.0) {
                return Err(Error::InvalidConfig("slot_ghz must be positive".into()));
            }
        }
        Ok(())
    }

    /// Power of a channel of `gbd` under this policy.
    pub fn channel_power_dbm(&self, gbd: f64) -> f64 {
        if self.constant_psd {
            self.psd_anchor_dbm + lin_to_db(gbd / REFERENCE_SYMBOL_RATE_GBD)
        } else {
            self.psd_anchor_dbm
        }
    }

    /// Centers of the fixed slots, or `None` in flex mode.
    pub fn slot_centers_thz(&self) -> Option<Vec<f64>> {
        match self.mode {
            GridMode::Flex => None,
            GridMode::FixedSlots { slot_ghz } => {
                let n = (self.band_width_ghz() / slot_ghz + 1e-9).floor() as usize;
                Some(
                    (0..n)
                        .map(|k| self.band_start_thz + (k as f64 + 0.5) * slot_ghz * 1e-3)
                        .collect(),
                )
            }
        }
    }

    fn snap_rate(&self, gbd: f64) -> f64 {
        let g = self.granularity_ghz;
        let lo = (MIN_SYMBOL_RATE_GBD / g).ceil() * g;
        let hi = (MAX_SYMBOL_RATE_GBD / g).floor() * g;
        ((gbd / g).round() * g).clamp(lo, hi)
    }
}

/// Builds a fully loaded plan around `cut`.
///
/// Flex mode keeps the CUT at its requested center and packs interferers
/// from the band edges towards the CUT, left side first. A drawn rate that
/// does not fit the remaining gap shrinks to the widest granular rate that
/// does, and packing stops once not even the narrowest rate fits.
pub fn build_full_plan(policy: &GridPolicy, cut: &ChannelSpec, rng_seed: u64) -> Result<SpectrumRealization> {
    policy.validate()?;
    let out_of_band = || Error::CutOutOfBand {
        center_thz: cut.center_freq_thz,
        bandwidth_ghz: cut.symbol_rate_gbd,
    };
    if !(cut.symbol_rate_gbd > 0.0) {
        return Err(out_of_band());
    }
    let slack = 1e-9;
    if cut.lower_edge_thz() < policy.band_start_thz - slack || cut.upper_edge_thz() > policy.band_end_thz + slack {
        return Err(out_of_band());
    }
    let mut cut = ChannelSpec { is_cut: true, ..*cut };
    cut.launch_power_dbm = policy.channel_power_dbm(cut.symbol_rate_gbd);

    let mut rng = rng_from_seed(rng_seed);
    let (channels, cut_index) = match policy.mode {
        GridMode::Flex => {
            let mut left = Vec::new();
            let mut right = Vec::new();
            // Offsets in GHz from the band start.
            let cut_lo = (cut.lower_edge_thz() - policy.band_start_thz) * 1e3;
            let cut_hi = (cut.upper_edge_thz() - policy.band_start_thz) * 1e3;
            pack(policy, &mut rng, 0.0, cut_lo, &mut left);
            pack(policy, &mut rng, cut_hi, policy.band_width_ghz(), &mut right);
            let cut_index = left.len();
            let mut channels = left;
            channels.push(cut);
            channels.extend(right);
            (channels, cut_index)
        }
        GridMode::FixedSlots { slot_ghz } => {
            if cut.symbol_rate_gbd > slot_ghz + slack {
                return Err(out_of_band());
            }
            let centers = policy.slot_centers_thz().unwrap_or_default();
            let cut_index = centers
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    (a.1 - cut.center_freq_thz)
                        .abs()
                        .total_cmp(&(b.1 - cut.center_freq_thz).abs())
                })
                .map(|(i, _)| i)
                .ok_or_else(out_of_band)?;
            let channels = centers
                .iter()
                .enumerate()
                .map(|(i, &center)| {
                    if i == cut_index {
                        ChannelSpec {
                            center_freq_thz: center,
                            ..cut
                        }
                    } else {
                        ChannelSpec {
                            center_freq_thz: center,
                            symbol_rate_gbd: slot_ghz,
                            launch_power_dbm: policy.channel_power_dbm(slot_ghz),
                            is_cut: false,
                            modulation: Modulation::Ase,
                        }
                    }
                })
                .collect();
            (channels, cut_index)
        }
    };
    let n = channels.len();
    let plan = SpectrumRealization {
        band_start_thz: policy.band_start_thz,
        band_end_thz: policy.band_end_thz,
        channels,
        active_mask: vec![true; n],
        cut_index,
    };
    plan.validate()?;
    Ok(plan)
}

/// Fully loaded plan in which every interferer copies the CUT's symbol rate
/// and modulation, packed edge to edge outwards from the CUT.
pub fn uniform_plan(policy: &GridPolicy, cut: &ChannelSpec) -> Result<SpectrumRealization> {
    policy.validate()?;
    let w = cut.symbol_rate_gbd * 1e-3;
    let slack = 1e-9;
    if !(w > 0.0) || cut.lower_edge_thz() < policy.band_start_thz - slack || cut.upper_edge_thz() > policy.band_end_thz + slack {
        return Err(Error::CutOutOfBand {
            center_thz: cut.center_freq_thz,
            bandwidth_ghz: cut.symbol_rate_gbd,
        });
    }
    let below = ((cut.lower_edge_thz() - policy.band_start_thz + slack) / w).floor() as usize;
    let above = ((policy.band_end_thz - cut.upper_edge_thz() + slack) / w).floor() as usize;
    let power = policy.channel_power_dbm(cut.symbol_rate_gbd);
    let channels: Vec<ChannelSpec> = (0..below + above + 1)
        .map(|i| {
            let k = i as f64 - below as f64;
            ChannelSpec {
                center_freq_thz: cut.center_freq_thz + k * w,
                launch_power_dbm: power,
                is_cut: i == below,
                ..*cut
            }
        })
        .collect();
    let n = channels.len();
    let plan = SpectrumRealization {
        band_start_thz: policy.band_start_thz,
        band_end_thz: policy.band_end_thz,
        channels,
        active_mask: vec![true; n],
        cut_index: below,
    };
    plan.validate()?;
    Ok(plan)
}

fn pack(policy: &GridPolicy, rng: &mut crate::seed::Rng, start_ghz: f64, end_ghz: f64, out: &mut Vec<ChannelSpec>) {
    let g = policy.granularity_ghz;
    let narrowest = policy.snap_rate(MIN_SYMBOL_RATE_GBD);
    let mut x = start_ghz;
    loop {
        let mut w = policy.snap_rate(rng.random_range(MIN_SYMBOL_RATE_GBD..=MAX_SYMBOL_RATE_GBD));
        let modulation = Modulation::FORMATS[rng.random_range(0..Modulation::FORMATS.len())];
        let gap = end_ghz - x;
        if gap < w {
            if gap >= narrowest {
                w = ((gap + 1e-9) / g).floor() * g;
            } else {
                break;
            }
        }
        out.push(ChannelSpec {
            center_freq_thz: policy.band_start_thz + (x + 0.5 * w) * 1e-3,
            symbol_rate_gbd: w,
            launch_power_dbm: policy.channel_power_dbm(w),
            is_cut: false,
            modulation,
        });
        x += w;
    }
}

/// Activates a random subset of interferers whose bandwidth brings the fill
/// close to `fill_target`.
///
/// Interferers are visited in a seeded random order and switched on while the
/// fill is below the target; the one that crosses the target is kept only if
/// that lands closer to it. A target at or below the CUT-only fill returns
/// the CUT alone.
pub fn sample_partial(full: &SpectrumRealization, fill_target: f64, rng_seed: u64) -> Result<SpectrumRealization> {
    if !(fill_target > 0.0 && fill_target <= 1.0) {
        return Err(Error::InvalidArgument(format!("fill_target {fill_target} outside (0, 1]")));
    }
    let band_ghz = full.band_width_thz() * 1e3;
    let mut mask = vec![false; full.channels.len()];
    mask[full.cut_index] = true;
    let mut fill = full.cut().symbol_rate_gbd / band_ghz;

    let mut order: Vec<usize> = (0..full.channels.len()).filter(|&i| i != full.cut_index).collect();
    let mut rng = rng_from_seed(rng_seed);
    order.shuffle(&mut rng);
    for i in order {
        if fill >= fill_target {
            break;
        }
        let next = fill + full.channels[i].symbol_rate_gbd / band_ghz;
        if next > fill_target && next - fill_target > fill_target - fill {
            break;
        }
        mask[i] = true;
        fill = next;
    }
    Ok(full.with_mask(mask))
}

const FORMAT_HEADER: &str = "# margin-probe spectrum v1";

/// Line-oriented text form: a header, the band, then one channel per line as
/// `center_thz gbd dbm active is_cut modulation`.
pub fn to_text(spectrum: &SpectrumRealization) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{FORMAT_HEADER}");
    let _ = writeln!(s, "# band {} {}", spectrum.band_start_thz, spectrum.band_end_thz);
    for (c, &on) in spectrum.channels.iter().zip(&spectrum.active_mask) {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            c.center_freq_thz, c.symbol_rate_gbd, c.launch_power_dbm, on as u8, c.is_cut as u8, c.modulation
        );
    }
    s
}

pub fn from_text(text: &str) -> Result<SpectrumRealization> {
    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    let mut band = None;
    let mut channels = Vec::new();
    let mut mask = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut words = rest.split_whitespace();
            if words.next() == Some("band") {
                let lo = words.next().map(f64::from_str);
                let hi = words.next().map(f64::from_str);
                match (lo, hi) {
                    (Some(Ok(lo)), Some(Ok(hi))) => band = Some((lo, hi)),
                    _ => return Err(parse_err(line_no, "malformed band line".into())),
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(parse_err(line_no, format!("expected 6 fields, found {}", fields.len())));
        }
        let num = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|e| parse_err(line_no, format!("field {}: {e}", i + 1)))
        };
        let flag = |i: usize| match fields[i] {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(parse_err(line_no, format!("flag `{other}` is not 0 or 1"))),
        };
        channels.push(ChannelSpec {
            center_freq_thz: num(0)?,
            symbol_rate_gbd: num(1)?,
            launch_power_dbm: num(2)?,
            is_cut: flag(4)?,
            modulation: fields[5].parse().map_err(|e: Error| parse_err(line_no, e.to_string()))?,
        });
        mask.push(flag(3)?);
    }
    let (band_start_thz, band_end_thz) = band.ok_or_else(|| parse_err(0, "missing band line".into()))?;
    let cut_index = channels
        .iter()
        .position(|c| c.is_cut)
        .ok_or_else(|| parse_err(0, "no channel flagged as CUT".into()))?;
    let spectrum = SpectrumRealization {
        band_start_thz,
        band_end_thz,
        channels,
        active_mask: mask,
        cut_index,
    };
    spectrum.validate()?;
    Ok(spectrum)
}

use std::collections::BTreeSet;

use super::{ChannelSource, FeatureError, FeatureStack};
use crate::grid_io::BandId;

/// Which bands to suppress and how strongly.
///
/// Masked channels are multiplied by `1 - mask_ratio`; a ratio of 1 zeroes
/// them outright.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskConfig {
    pub mask_bands: BTreeSet<BandId>,
    pub mask_ratio: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            mask_bands: BTreeSet::new(),
            mask_ratio: 1.0,
        }
    }
}

impl MaskConfig {
    pub fn new(bands: impl IntoIterator<Item = BandId>, mask_ratio: f64) -> Self {
        Self {
            mask_bands: bands.into_iter().collect(),
            mask_ratio,
        }
    }

    /// VIS/NIR bands B01-B06 fully removed (nighttime model).
    pub fn vis_nir() -> Self {
        Self::new((1..=6).map(BandId::new), 1.0)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(FeatureError::Mask(format!(
                "mask_ratio {} outside [0, 1]",
                self.mask_ratio
            )));
        }
        Ok(())
    }

    fn masks(&self, src: &ChannelSource) -> bool {
        match src {
            ChannelSource::Aux(_) => false,
            other => other.bands().iter().any(|b| self.mask_bands.contains(b)),
        }
    }
}

/// Indices of the channels `cfg` suppresses in `layout`.
pub fn masked_channels(layout: &[ChannelSource], cfg: &MaskConfig) -> Vec<usize> {
    layout
        .iter()
        .enumerate()
        .filter(|(_, src)| cfg.masks(src))
        .map(|(i, _)| i)
        .collect()
}

pub fn apply_mask(mut stack: FeatureStack, cfg: &MaskConfig) -> Result<FeatureStack, FeatureError> {
    cfg.validate()?;
    if cfg.mask_ratio == 0.0 {
        return Ok(stack);
    }
    let keep = (1.0 - cfg.mask_ratio) as f32;
    for c in masked_channels(&stack.layout, cfg) {
        let plane = stack.channel_mut(c);
        if cfg.mask_ratio == 1.0 {
            plane.fill(0.0);
        } else {
            plane.iter_mut().for_each(|v| *v *= keep);
        }
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::base_layout;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(seed: u64) -> FeatureStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = base_layout();
        FeatureStack {
            rows: 3,
            cols: 4,
            data: (0..layout.len() * 12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            layout,
        }
    }

    fn zeroed(s: &FeatureStack) -> Vec<usize> {
        (0..s.channels())
            .filter(|&c| s.channel(c).iter().all(|v| v.to_bits() == 0))
            .collect()
    }

    #[test]
    fn vis_nir_mask_zeroes_21_channels() {
        let s = apply_mask(random_stack(1), &MaskConfig::vis_nir()).unwrap();
        let expected: Vec<usize> = (0..6).chain(16..31).collect();
        assert_eq!(zeroed(&s), expected);
    }

    #[test]
    fn empty_mask_is_identity() {
        let s = random_stack(2);
        assert_eq!(apply_mask(s.clone(), &MaskConfig::default()).unwrap(), s);
    }

    #[test]
    fn single_band_mask_matches_involvement_scan() {
        let s = random_stack(3);
        let cfg = MaskConfig::new([BandId::new(7)], 1.0);
        let out = apply_mask(s.clone(), &cfg).unwrap();
        // brute-force: a channel involves B07 if its direct band or either operand is B07
        let involved: Vec<usize> = s
            .layout
            .iter()
            .enumerate()
            .filter(|(_, src)| match src {
                ChannelSource::Band(b) => b.number() == 7,
                ChannelSource::Difference(a, b) => a.number() == 7 || b.number() == 7,
                ChannelSource::Aux(_) => false,
            })
            .map(|(i, _)| i)
            .collect();
        assert_eq!(involved.len(), 10);
        assert_eq!(zeroed(&out), involved);
        for c in (0..76).filter(|c| !involved.contains(c)) {
            assert_eq!(out.channel(c), s.channel(c));
        }
    }

    #[test]
    fn partial_ratio_attenuates() {
        let s = random_stack(4);
        let out = apply_mask(s.clone(), &MaskConfig::new([BandId::new(1)], 0.25)).unwrap();
        assert_eq!(out.channel(0)[0], s.channel(0)[0] * 0.75);
        assert_eq!(out.channel(1), s.channel(1));
        assert!(apply_mask(s, &MaskConfig::new([BandId::new(1)], 1.5)).is_err());
    }

    #[test]
    fn full_mask_is_idempotent() {
        let once = apply_mask(random_stack(5), &MaskConfig::vis_nir()).unwrap();
        let twice = apply_mask(once.clone(), &MaskConfig::vis_nir()).unwrap();
        assert_eq!(once, twice);
    }
}

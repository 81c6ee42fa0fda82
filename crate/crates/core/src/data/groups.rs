use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::cube::HyperCube;
use crate::error::{Error, Result};

/// Contiguous runs of `group_size` neighbouring bands covering the spectrum.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandGroupSet {
    pub group_size: usize,
    pub groups: Vec<Range<usize>>,
}

impl BandGroupSet {
    pub fn for_bands(bands: usize, group_size: usize) -> Result<Self> {
        if group_size == 0 || group_size > bands {
            return Err(Error::invalid(format!(
                "band group size must be in 1..={bands}, got {group_size}"
            )));
        }
        let groups = (0..bands)
            .step_by(group_size)
            .map(|s| s..(s + group_size).min(bands))
            .collect();
        Ok(BandGroupSet { group_size, groups })
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn total_bands(&self) -> usize {
        self.groups.last().map_or(0, |g| g.end)
    }
}

pub fn split_band_groups(cube: &HyperCube, group_size: usize) -> Result<BandGroupSet> {
    BandGroupSet::for_bands(cube.bands(), group_size)
}

use super::cube::{HyperCube, LabelMap, UNLABELED};
use super::groups::BandGroupSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An `M x N x L` sub-cube around one pixel, restricted to one band group.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPatch {
    pub data: Tensor,
    pub center: (usize, usize),
    pub group_index: usize,
    pub label: u16,
}

/// Reflects `i` into `0..n` without repeating the edge sample.
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn check_patch(patch: (usize, usize)) -> Result<()> {
    if patch.0.is_multiple_of(2) || patch.1.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "patch extents must be odd, got {}x{}",
            patch.0, patch.1
        )));
    }
    Ok(())
}

/// The mirror-padded patch of one band group around `(x, y)`.
pub fn patch_at(
    cube: &HyperCube,
    bands: std::ops::Range<usize>,
    center: (usize, usize),
    patch: (usize, usize),
) -> Result<Tensor> {
    check_patch(patch)?;
    let (m, n) = patch;
    let (rm, rn) = ((m / 2) as isize, (n / 2) as isize);
    let l = bands.len();
    let mut out = Vec::with_capacity(m * n * l);
    for dx in -rm..=rm {
        let sx = mirror(center.0 as isize + dx, cube.height());
        for dy in -rn..=rn {
            let sy = mirror(center.1 as isize + dy, cube.width());
            out.extend_from_slice(&cube.pixel(sx, sy)[bands.clone()]);
        }
    }
    Tensor::new([m, n, l], out)
}

/// One patch per labeled pixel per band group, ordered by pixel index, then
/// group.
pub fn extract_patches(
    cube: &HyperCube,
    labels: &LabelMap,
    groups: &BandGroupSet,
    patch: (usize, usize),
) -> Result<Vec<LabeledPatch>> {
    check_patch(patch)?;
    labels.expect_extents("extract_patches", cube.height(), cube.width())?;
    let mut out = Vec::new();
    for x in 0..cube.height() {
        for y in 0..cube.width() {
            let label = labels.get(x, y);
            if label == UNLABELED {
                continue;
            }
            for (g, range) in groups.groups.iter().enumerate() {
                out.push(LabeledPatch {
                    data: patch_at(cube, range.clone(), (x, y), patch)?,
                    center: (x, y),
                    group_index: g,
                    label,
                });
            }
        }
    }
    Ok(out)
}

//! Global masker and blindspot mapper.
//!
//! Copy `k` of an `s × s`-cell volume hides offset `(k / s, k % s)` in every
//! cell, so the blindspot sets of the `s²` copies partition the pixel grid.
//! The mapper gathers each output pixel from the copy that hid it.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::ImageTensor;

pub const DEFAULT_CELL_SIZE: usize = 4;

thread_local! {
    static VOLUMES_BUILT: Cell<u64> = const { Cell::new(0) };
}

/// Masked volumes built on the current thread so far.
pub fn volumes_built() -> u64 {
    VOLUMES_BUILT.with(Cell::get)
}

/// Value written at a blindspot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MaskFill {
    /// Mean of the in-bounds 8-neighbors in the unmasked image.
    #[default]
    NeighborMean,
    Zero,
    /// One in-bounds 8-neighbor drawn uniformly from a stream seeded here.
    RandomNeighbor { seed: u64 },
}

impl MaskFill {
    pub fn parse(s: &str) -> Result<MaskFill> {
        match s.trim() {
            "mean" | "neighbor_mean" => Ok(MaskFill::NeighborMean),
            "zero" => Ok(MaskFill::Zero),
            "random" | "random_neighbor" => Ok(MaskFill::RandomNeighbor { seed: 0 }),
            other => Err(Error::InvalidArgument(format!("unknown mask fill {other:?}"))),
        }
    }
}

impl std::fmt::Display for MaskFill {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskFill::NeighborMean => "mean",
            MaskFill::Zero => "zero",
            MaskFill::RandomNeighbor { .. } => "random",
        })
    }
}

#[derive(Clone, Debug)]
pub struct MaskedVolume {
    copies: Vec<ImageTensor>,
    cell_size: usize,
    source_height: usize,
    source_width: usize,
}

impl MaskedVolume {
    pub fn copies(&self) -> &[ImageTensor] {
        &self.copies
    }

    pub fn into_copies(self) -> Vec<ImageTensor> {
        self.copies
    }

    pub fn cell_size(&self) -> usize {
        self.cell_size
    }

    /// Shape of the unpadded source image.
    pub fn source_size(&self) -> (usize, usize) {
        (self.source_height, self.source_width)
    }

    /// Shape every copy (and every network output) has after padding.
    pub fn padded_size(&self) -> (usize, usize) {
        (self.copies[0].height(), self.copies[0].width())
    }

    /// Blindspot offset of copy `k` inside each cell.
    pub fn blindspot_offset(&self, k: usize) -> (usize, usize) {
        (k / self.cell_size, k % self.cell_size)
    }

    /// Copy in which pixel `(row, col)` is a blindspot.
    #[inline]
    pub fn copy_for(&self, row: usize, col: usize) -> usize {
        (row % self.cell_size) * self.cell_size + col % self.cell_size
    }

    pub fn is_blindspot(&self, k: usize, row: usize, col: usize) -> bool {
        self.copy_for(row, col) == k
    }

    /// Blindspot coordinates of copy `k` within the source extent.
    pub fn blindspots(&self, k: usize) -> Vec<(usize, usize)> {
        let (dr, dc) = self.blindspot_offset(k);
        let s = self.cell_size;
        (dr..self.source_height)
            .step_by(s)
            .flat_map(|r| (dc..self.source_width).step_by(s).map(move |c| (r, c)))
            .collect()
    }

    /// Routes a source-sized per-pixel quantity (typically a loss gradient)
    /// back to the copies: copy `k` receives the values at its blindspots and
    /// zero elsewhere, at padded size.
    pub fn scatter_blindspots(&self, values: &ImageTensor) -> Result<Vec<ImageTensor>> {
        let (h, w) = (self.source_height, self.source_width);
        if values.height() != h || values.width() != w {
            return Err(Error::shape(
                format!("{h}x{w}"),
                format!("{}x{}", values.height(), values.width()),
            ));
        }
        let (ph, pw) = self.padded_size();
        let c = values.channels();
        let mut out = vec![ImageTensor::zeros(ph, pw, c); self.copies.len()];
        for r in 0..h {
            for col in 0..w {
                let k = self.copy_for(r, col);
                for ch in 0..c {
                    out[k].set(r, col, ch, values.get(r, col, ch));
                }
            }
        }
        Ok(out)
    }
}

/// Builds the `s²` masked copies of `y` with the default neighbor-mean fill.
pub fn build_masked_volume(y: &ImageTensor, cell_size: usize) -> Result<MaskedVolume> {
    build_masked_volume_with(y, cell_size, MaskFill::NeighborMean)
}

pub fn build_masked_volume_with(y: &ImageTensor, cell_size: usize, fill: MaskFill) -> Result<MaskedVolume> {
    if cell_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "cell size must be at least 2, got {cell_size}"
        )));
    }
    VOLUMES_BUILT.with(|n| n.set(n.get() + 1));
    let (h, w) = (y.height(), y.width());
    let pad_b = (cell_size - h % cell_size) % cell_size;
    let pad_r = (cell_size - w % cell_size) % cell_size;
    let src = y.reflect_pad(pad_b, pad_r)?;
    let (ph, pw, c) = src.shape();

    let mut rng = match fill {
        MaskFill::RandomNeighbor { seed } => Some(SeededRng::new(seed)),
        _ => None,
    };
    let mut neighbors = Vec::with_capacity(8);
    let mut copies = Vec::with_capacity(cell_size * cell_size);
    for k in 0..cell_size * cell_size {
        let (dr, dc) = (k / cell_size, k % cell_size);
        let mut copy = src.clone();
        for r in (dr..ph).step_by(cell_size) {
            for col in (dc..pw).step_by(cell_size) {
                neighbors.clear();
                for (nr, nc) in neighbor_coords(r, col, ph, pw) {
                    neighbors.push((nr, nc));
                }
                let pick = rng.as_mut().map(|g| neighbors[g.below(neighbors.len())]);
                for ch in 0..c {
                    let v = match fill {
                        MaskFill::Zero => 0.0,
                        MaskFill::NeighborMean => {
                            let sum: f64 = neighbors
                                .iter()
                                .map(|&(nr, nc)| src.get(nr, nc, ch) as f64)
                                .sum();
                            (sum / neighbors.len() as f64) as f32
                        }
                        MaskFill::RandomNeighbor { .. } => {
                            let (nr, nc) = pick.expect("rng present for random fill");
                            src.get(nr, nc, ch)
                        }
                    };
                    copy.set(r, col, ch, v);
                }
            }
        }
        copies.push(copy);
    }
    Ok(MaskedVolume {
        copies,
        cell_size,
        source_height: h,
        source_width: w,
    })
}

fn neighbor_coords(r: usize, c: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1)
        .flat_map(|dr| (-1i64..=1).map(move |dc| (dr, dc)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(dr, dc)| {
            let nr = r as i64 + dr;
            let nc = c as i64 + dc;
            (nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w)
                .then_some((nr as usize, nc as usize))
        })
}

/// Gathers every source pixel from the copy in which it was a blindspot.
/// Outputs have the padded copy shape; the result has the source shape.
pub fn map_blindspots(outputs: &[ImageTensor], vol: &MaskedVolume) -> Result<ImageTensor> {
    if outputs.len() != vol.copies.len() {
        return Err(Error::shape(
            format!("{} outputs", vol.copies.len()),
            format!("{} outputs", outputs.len()),
        ));
    }
    let (ph, pw) = vol.padded_size();
    let c = outputs[0].channels();
    for o in outputs {
        if o.height() != ph || o.width() != pw || o.channels() != c {
            return Err(Error::shape(format!("{ph}x{pw}x{c}"), format!("{:?}", o.shape())));
        }
    }
    let (h, w) = vol.source_size();
    Ok(ImageTensor::from_fn(h, w, c, |r, col, ch| {
        outputs[vol.copy_for(r, col)].get(r, col, ch)
    }))
}

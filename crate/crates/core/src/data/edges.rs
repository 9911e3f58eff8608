use super::{EdgeMap, LabelMap};
use crate::{Error, Result};

/// Inter-class morphological gradient.
///
/// A pixel is an edge pixel iff its `kernel × kernel` neighbourhood (clipped at
/// the image border) holds two different labels, i.e. the windowed maximum and
/// minimum of the label map differ there.
pub fn derive_edges(mask: &LabelMap, kernel: usize) -> Result<EdgeMap> {
    if kernel < 3 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "edge kernel must be odd and at least 3, got {kernel}"
        )));
    }
    let (h, w) = (mask.height(), mask.width());
    let r = kernel / 2;
    let labels = mask.labels();

    let mut row_min = vec![0u8; h * w];
    let mut row_max = vec![0u8; h * w];
    for y in 0..h {
        let row = &labels[y * w..(y + 1) * w];
        for x in 0..w {
            let window = &row[x.saturating_sub(r)..(x + r + 1).min(w)];
            row_min[y * w + x] = *window.iter().min().unwrap();
            row_max[y * w + x] = *window.iter().max().unwrap();
        }
    }

    let mut edges = vec![0u8; h * w];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let lo = (y0..y1).map(|yy| row_min[yy * w + x]).min().unwrap();
            let hi = (y0..y1).map(|yy| row_max[yy * w + x]).max().unwrap();
            edges[y * w + x] = u8::from(lo != hi);
        }
    }
    LabelMap::new(h, w, edges)
}

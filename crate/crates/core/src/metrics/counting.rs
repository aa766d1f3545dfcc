use crate::error::{Error, Result};
use crate::groundtruth::DensityMap;

/// Mean absolute error over `(estimated, true)` count pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("MAE of an empty set"));
    }
    Ok(pairs.iter().map(|(e, g)| (e - g).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Cell boundaries of a `grid`-way split of `extent`: cell `k` spans
/// `[k·extent/grid, (k+1)·extent/grid)`.
fn cell_bounds(extent: usize, grid: usize) -> Vec<usize> {
    (0..=grid).map(|k| k * extent / grid).collect()
}

/// Grid Average Mean absolute Error for one image: the map is split into
/// `grid × grid` cells and the absolute count differences of all cells are
/// summed. `grid = 1` is the absolute count error.
pub fn game(pred: &DensityMap, gt: &DensityMap, grid: usize) -> Result<f64> {
    if grid == 0 {
        return Err(Error::invalid("GAME grid must be at least 1"));
    }
    let (h, w) = (gt.height(), gt.width());
    if (pred.height(), pred.width()) != (h, w) {
        return Err(Error::shape(format!(
            "GAME maps differ in shape: {}x{} vs {h}x{w}",
            pred.height(),
            pred.width()
        )));
    }
    let rows = cell_bounds(h, grid);
    let cols = cell_bounds(w, grid);
    let mut cells = vec![0.0f64; grid * grid];
    for (r, span) in rows.windows(2).enumerate() {
        for y in span[0]..span[1] {
            for (c, cspan) in cols.windows(2).enumerate() {
                let mut d = 0.0;
                for x in cspan[0]..cspan[1] {
                    d += pred.get(y, x) as f64 - gt.get(y, x) as f64;
                }
                cells[r * grid + c] += d;
            }
        }
    }
    Ok(cells.iter().map(|d| d.abs()).sum())
}

/// Dataset GAME: mean of the per-image values.
pub fn game_mean(pairs: &[(DensityMap, DensityMap)], grid: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("GAME of an empty set"));
    }
    let mut sum = 0.0;
    for (p, g) in pairs {
        sum += game(p, g, grid)?;
    }
    Ok(sum / pairs.len() as f64)
}

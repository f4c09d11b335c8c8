use ndarray::Array2;

use crate::error::{Error, Result};

pub const DEFAULT_DECIMATION: usize = 10;

/// `k x k` box filter followed by subsampling by `k`.
///
/// `out[i, j]` is the mean of the block whose top-left corner is
/// `(i k, j k)`. Trailing rows and columns that do not fill a block are dropped.
pub fn boxfilter_decimate(img: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    let (rows, cols) = img.dim();
    if k == 0 {
        return Err(Error::InvalidArgument("decimation factor must be positive".into()));
    }
    if rows < k || cols < k {
        return Err(Error::Shape(format!(
            "grid {rows}x{cols} smaller than the {k}x{k} decimation window"
        )));
    }
    let (out_r, out_c) = (rows / k, cols / k);
    let taps = (k * k) as f64;
    let mut out = Array2::zeros((out_r, out_c));
    for i in 0..out_r {
        for r in i * k..(i + 1) * k {
            let row = img.row(r);
            for j in 0..out_c {
                let mut acc = 0.0;
                for c in j * k..(j + 1) * k {
                    acc += row[c];
                }
                out[[i, j]] += acc;
            }
        }
    }
    // division rather than multiplication by 1/k^2 keeps constants exact
    out.mapv_inplace(|x| x / taps);
    Ok(out)
}

use super::array::DenseArray;
use crate::error::{Error, Result};

/// Max-shifted softmax of a slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut y: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = y.iter().sum();
    y.iter_mut().for_each(|v| *v /= s);
    y
}

/// Gradient of softmax given its output `y` and upstream `dy`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, di)| yi * (di - dot)).collect()
}

/// Softmax along one axis of an array.
pub fn softmax_axis(x: &DenseArray, axis: usize) -> Result<DenseArray> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::Shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let src = x.values();
    let dst = out.values_mut();
    let mut buf = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            for k in 0..n {
                buf[k] = src[(o * n + k) * inner + i];
            }
            for (k, v) in softmax(&buf).into_iter().enumerate() {
                dst[(o * n + k) * inner + i] = v;
            }
        }
    }
    Ok(out)
}

/// View of a `[H, W, D]` feature grid.
#[derive(Debug, Clone, Copy)]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl GridDims {
    pub fn of(grid: &DenseArray) -> Result<Self> {
        match *grid.shape() {
            [h, w, d] if h > 0 && w > 0 => Ok(Self {
                height: h,
                width: w,
                channels: d,
            }),
            _ => Err(Error::Shape(format!(
                "expected a non-empty [H, W, D] grid, got {:?}",
                grid.shape()
            ))),
        }
    }
}

/// Four bilinear taps: (row, col, weight) for in-range cells, plus the
/// fractional offsets needed by the backward pass.
struct Taps {
    cells: [(isize, isize, f64); 4],
    fx: f64,
    fy: f64,
    x0: isize,
    y0: isize,
}

fn taps(dims: GridDims, p: [f64; 2]) -> Option<Taps> {
    if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
        return None;
    }
    // cell (i, j) has its center at ((j + 0.5)/W, (i + 0.5)/H)
    let gx = p[0] * dims.width as f64 - 0.5;
    let gy = p[1] * dims.height as f64 - 0.5;
    let x0f = gx.floor();
    let y0f = gy.floor();
    let fx = gx - x0f;
    let fy = gy - y0f;
    let (x0, y0) = (x0f as isize, y0f as isize);
    Some(Taps {
        cells: [
            (y0, x0, (1.0 - fx) * (1.0 - fy)),
            (y0, x0 + 1, fx * (1.0 - fy)),
            (y0 + 1, x0, (1.0 - fx) * fy),
            (y0 + 1, x0 + 1, fx * fy),
        ],
        fx,
        fy,
        x0,
        y0,
    })
}

fn cell_offset(dims: GridDims, row: isize, col: isize) -> Option<usize> {
    if row < 0 || col < 0 || row as usize >= dims.height || col as usize >= dims.width {
        None
    } else {
        Some((row as usize * dims.width + col as usize) * dims.channels)
    }
}

/// Samples channels `[c0, c0 + out.len())` at normalized point `p = (x, y)`,
/// writing (not accumulating) into `out`. Points outside the unit square and
/// taps falling off the grid read zero.
pub(crate) fn sample_channels(
    grid: &[f64],
    dims: GridDims,
    p: [f64; 2],
    c0: usize,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let Some(t) = taps(dims, p) else { return };
    for &(r, c, w) in &t.cells {
        if w == 0.0 {
            continue;
        }
        if let Some(off) = cell_offset(dims, r, c) {
            let cell = &grid[off + c0..off + c0 + out.len()];
            for (o, v) in out.iter_mut().zip(cell) {
                *o += w * v;
            }
        }
    }
}

/// Backward of [`sample_channels`]: accumulates into `dgrid` and returns the
/// gradient with respect to the normalized point.
pub(crate) fn sample_channels_backward(
    grid: &[f64],
    dims: GridDims,
    p: [f64; 2],
    c0: usize,
    dout: &[f64],
    dgrid: Option<&mut [f64]>,
) -> [f64; 2] {
    let Some(t) = taps(dims, p) else {
        return [0.0, 0.0];
    };
    let n = dout.len();
    let read = |r: isize, c: isize| -> f64 {
        match cell_offset(dims, r, c) {
            Some(off) => grid[off + c0..off + c0 + n]
                .iter()
                .zip(dout)
                .map(|(a, b)| a * b)
                .sum(),
            None => 0.0,
        }
    };
    let v00 = read(t.y0, t.x0);
    let v01 = read(t.y0, t.x0 + 1);
    let v10 = read(t.y0 + 1, t.x0);
    let v11 = read(t.y0 + 1, t.x0 + 1);
    let dgx = (1.0 - t.fy) * (v01 - v00) + t.fy * (v11 - v10);
    let dgy = (1.0 - t.fx) * (v10 - v00) + t.fx * (v11 - v01);
    if let Some(dgrid) = dgrid {
        for &(r, c, w) in &t.cells {
            if w == 0.0 {
                continue;
            }
            if let Some(off) = cell_offset(dims, r, c) {
                for (g, d) in dgrid[off + c0..off + c0 + n].iter_mut().zip(dout) {
                    *g += w * d;
                }
            }
        }
    }
    [dgx * dims.width as f64, dgy * dims.height as f64]
}

/// Bilinear sample of all channels of a `[H, W, D]` grid at `p ∈ [0,1]²`.
pub fn bilinear_sample(grid: &DenseArray, p: [f64; 2]) -> Result<Vec<f64>> {
    let dims = GridDims::of(grid)?;
    let mut out = vec![0.0; dims.channels];
    sample_channels(grid.values(), dims, p, 0, &mut out);
    Ok(out)
}

/// Backward of [`bilinear_sample`]; accumulates into `dgrid`, returns `dL/dp`.
pub fn bilinear_sample_backward(
    grid: &DenseArray,
    p: [f64; 2],
    dout: &[f64],
    dgrid: &mut DenseArray,
) -> Result<[f64; 2]> {
    let dims = GridDims::of(grid)?;
    if dout.len() != dims.channels || !dgrid.same_shape(grid) {
        return Err(Error::Shape("bilinear backward shapes".into()));
    }
    Ok(sample_channels_backward(
        grid.values(),
        dims,
        p,
        0,
        dout,
        Some(dgrid.values_mut()),
    ))
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity; zero when either vector is (numerically) zero.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu < 1e-12 || nv < 1e-12 {
        return Ok(0.0);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Unit-length copy of `u`; `None` when its norm is below 1e-12.
pub fn l2_normalize(u: &[f64]) -> Option<Vec<f64>> {
    let n = norm(u);
    (n >= 1e-12).then(|| u.iter().map(|v| v / n).collect())
}

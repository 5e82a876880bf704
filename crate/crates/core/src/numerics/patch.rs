use super::array::DenseArray;
use super::layers::Linear;
use crate::error::{Error, Result};

fn patch_dims(frame: &DenseArray, patch: usize, layer: &Linear) -> Result<(usize, usize, usize)> {
    let [h, w, c] = *frame.shape() else {
        return Err(Error::Shape(format!(
            "frame must be [H, W, C], got {:?}",
            frame.shape()
        )));
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Shape(format!(
            "frame {h}x{w} is not divisible into {patch}x{patch} patches"
        )));
    }
    if layer.in_dim() != patch * patch * c {
        return Err(Error::Shape(format!(
            "patch projection expects {} inputs, patches have {}",
            layer.in_dim(),
            patch * patch * c
        )));
    }
    Ok((h, w, c))
}

/// Flattens each `patch × patch` block (row, column, channel order).
fn gather(frame: &[f64], w: usize, c: usize, patch: usize, pr: usize, pc: usize, buf: &mut [f64]) {
    let mut k = 0;
    for dy in 0..patch {
        let row = pr * patch + dy;
        let start = (row * w + pc * patch) * c;
        let n = patch * c;
        buf[k..k + n].copy_from_slice(&frame[start..start + n]);
        k += n;
    }
}

/// Projects non-overlapping patches of a `[H, W, C]` frame to a
/// `[H/patch, W/patch, D]` feature grid.
pub fn patch_embed(frame: &DenseArray, patch: usize, layer: &Linear) -> Result<DenseArray> {
    let (h, w, c) = patch_dims(frame, patch, layer)?;
    let (gh, gw, d) = (h / patch, w / patch, layer.out_dim());
    let mut out = DenseArray::zeros(&[gh, gw, d]);
    let mut buf = vec![0.0; layer.in_dim()];
    let ov = out.values_mut();
    for pr in 0..gh {
        for pc in 0..gw {
            gather(frame.values(), w, c, patch, pr, pc, &mut buf);
            let o = (pr * gw + pc) * d;
            layer.forward_into(&buf, &mut ov[o..o + d]);
        }
    }
    Ok(out)
}

/// Accumulates projection gradients for an upstream `[H/patch, W/patch, D]` gradient.
pub fn patch_embed_backward(
    frame: &DenseArray,
    patch: usize,
    layer: &Linear,
    dout: &DenseArray,
    grad: &mut Linear,
) -> Result<()> {
    let (h, w, c) = patch_dims(frame, patch, layer)?;
    let (gh, gw, d) = (h / patch, w / patch, layer.out_dim());
    if dout.shape() != [gh, gw, d] {
        return Err(Error::Shape(format!(
            "patch gradient {:?}, expected {:?}",
            dout.shape(),
            [gh, gw, d]
        )));
    }
    let mut buf = vec![0.0; layer.in_dim()];
    for pr in 0..gh {
        for pc in 0..gw {
            gather(frame.values(), w, c, patch, pr, pc, &mut buf);
            let o = (pr * gw + pc) * d;
            layer.backward_into(&buf, &dout.values()[o..o + d], grad, None);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_frame_gives_constant_grid() {
        let frame = DenseArray::from_vec(&[4, 4, 1], vec![2.0; 16]).unwrap();
        let mut layer = Linear::zeros(4, 1);
        layer.weight.values_mut().copy_from_slice(&[0.25; 4]);
        let g = patch_embed(&frame, 2, &layer).unwrap();
        assert_eq!(g.shape(), &[2, 2, 1]);
        assert!(g.values().iter().all(|v| *v == 2.0));
    }

    #[test]
    fn hand_computed_grid() {
        // frame values 0..16 laid out row-major, one channel
        let frame = DenseArray::from_vec(&[4, 4, 1], (0..16).map(f64::from).collect()).unwrap();
        let mut layer = Linear::zeros(4, 2);
        // row 0 sums the patch, row 1 picks its top-left pixel, bias 1 on row 1
        layer
            .weight
            .values_mut()
            .copy_from_slice(&[1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        layer.bias.values_mut().copy_from_slice(&[0.0, 1.0]);
        let g = patch_embed(&frame, 2, &layer).unwrap();
        // patches: [0,1,4,5], [2,3,6,7], [8,9,12,13], [10,11,14,15]
        assert_eq!(g.values(), &[10.0, 1.0, 18.0, 3.0, 42.0, 9.0, 50.0, 11.0]);
    }

    #[test]
    fn indivisible_frame_is_error() {
        let frame = DenseArray::zeros(&[5, 5, 1]);
        assert!(patch_embed(&frame, 2, &Linear::zeros(4, 3)).is_err());
    }
}

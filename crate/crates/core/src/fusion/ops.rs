use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Source index pair and interpolation weight along one axis, with corner
/// alignment off and coordinates clamped at the low border.
fn axis_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Per-channel bilinear resize.
pub fn resize_bilinear(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, ih, iw) = t.dims3()?;
    if h == 0 || w == 0 {
        return Err(Error::InvalidParameter("resize target must be at least 1x1".into()));
    }
    let ys: Vec<_> = (0..h).map(|y| axis_taps(y, ih, h)).collect();
    let xs: Vec<_> = (0..w).map(|x| axis_taps(x, iw, w)).collect();
    Ok(Tensor::from_fn3(c, h, w, |ch, y, x| {
        let (y0, y1, ly) = ys[y];
        let (x0, x1, lx) = xs[x];
        // Written as lerps so constant inputs come out exactly constant.
        let top = t.at3(ch, y0, x0) + lx * (t.at3(ch, y0, x1) - t.at3(ch, y0, x0));
        let bottom = t.at3(ch, y1, x0) + lx * (t.at3(ch, y1, x1) - t.at3(ch, y1, x0));
        top + ly * (bottom - top)
    }))
}

pub fn resize_bilinear_backward(grad_out: &Tensor, in_h: usize, in_w: usize) -> Result<Tensor> {
    let (c, h, w) = grad_out.dims3()?;
    let mut g = Tensor::zeros(&[c, in_h, in_w]);
    for y in 0..h {
        let (y0, y1, ly) = axis_taps(y, in_h, h);
        for x in 0..w {
            let (x0, x1, lx) = axis_taps(x, in_w, w);
            for ch in 0..c {
                let go = grad_out.at3(ch, y, x);
                let taps = [
                    (y0, x0, (1.0 - ly) * (1.0 - lx)),
                    (y0, x1, (1.0 - ly) * lx),
                    (y1, x0, ly * (1.0 - lx)),
                    (y1, x1, ly * lx),
                ];
                for (yy, xx, wgt) in taps {
                    let i = g.idx3(ch, yy, xx);
                    g.data_mut()[i] += go * wgt;
                }
            }
        }
    }
    Ok(g)
}

/// `x ⊙ m` with a single-channel `m` broadcast over the channels of `x`.
pub fn multiply_broadcast(x: &Tensor, m: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    m.ensure_shape(&[1, h, w])?;
    Ok(Tensor::from_fn3(c, h, w, |ch, y, xx| x.at3(ch, y, xx) * m.at3(0, y, xx)))
}

/// Gradients with respect to `x` and `m`.
pub fn multiply_broadcast_backward(x: &Tensor, m: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = x.dims3()?;
    grad_out.ensure_shape(x.shape())?;
    let gx = Tensor::from_fn3(c, h, w, |ch, y, xx| grad_out.at3(ch, y, xx) * m.at3(0, y, xx));
    let gm = Tensor::from_fn3(1, h, w, |_, y, xx| (0..c).map(|ch| grad_out.at3(ch, y, xx) * x.at3(ch, y, xx)).sum());
    Ok((gx, gm))
}

/// Channel concatenation.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, h, w) = a.dims3()?;
    let (cb, hb, wb) = b.dims3()?;
    if (h, w) != (hb, wb) {
        return Err(Error::dims(&[cb, h, w], &[cb, hb, wb]));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(vec![ca + cb, h, w], data)
}

/// Splits a concatenation gradient back into its two parts.
pub fn concat_backward(grad_out: &Tensor, channels_a: usize) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = grad_out.dims3()?;
    if channels_a > c {
        return Err(Error::dims(&[c], &[channels_a]));
    }
    let split = channels_a * h * w;
    Ok((
        Tensor::new(vec![channels_a, h, w], grad_out.data()[..split].to_vec())?,
        Tensor::new(vec![c - channels_a, h, w], grad_out.data()[split..].to_vec())?,
    ))
}

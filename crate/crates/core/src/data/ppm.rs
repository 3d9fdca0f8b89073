use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Map `[-1, 1]` to `[0, 255]`, clamping, rounding half up.
pub fn pixel_to_byte(v: f64) -> u8 {
    let scaled = (v + 1.0) * 127.5;
    (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Tile `[b, C, H, W]` images row-major, `columns` per row, into a binary
/// PPM (P6). Grayscale is replicated to RGB; unused tiles are black.
pub fn encode_image_grid<T: Scalar>(images: &Tensor<T>, columns: usize) -> Result<Vec<u8>> {
    let [b, c, h, w] = match *images.shape() {
        [b, c, h, w] => [b, c, h, w],
        ref s => return Err(Error::shape("export_image_grid", format!("expected [b, C, H, W], got {s:?}"))),
    };
    if b == 0 || columns == 0 {
        return Err(Error::shape("export_image_grid", "need at least one image and one column"));
    }
    if c != 1 && c != 3 {
        return Err(Error::shape("export_image_grid", format!("{c} channels; expected 1 or 3")));
    }
    let cols = columns.min(b);
    let rows = b.div_ceil(cols);
    let (gw, gh) = (cols * w, rows * h);
    let mut out = format!("P6\n{gw} {gh}\n255\n").into_bytes();
    let header_len = out.len();
    out.resize(header_len + gw * gh * 3, 0);
    let px = &mut out[header_len..];
    let data = images.data();
    for i in 0..b {
        let (ty, tx) = (i / cols, i % cols);
        for y in 0..h {
            for x in 0..w {
                let dst = ((ty * h + y) * gw + tx * w + x) * 3;
                for ch in 0..3 {
                    let src_c = if c == 1 { 0 } else { ch };
                    let v = data[((i * c + src_c) * h + y) * w + x].to_acc();
                    px[dst + ch] = pixel_to_byte(v);
                }
            }
        }
    }
    Ok(out)
}

pub fn export_image_grid<T: Scalar>(images: &Tensor<T>, columns: usize, path: &Path) -> Result<()> {
    let bytes = encode_image_grid(images, columns)?;
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

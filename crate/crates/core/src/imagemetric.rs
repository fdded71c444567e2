//! YCbCr-space image distortion with a luminance Laplacian term and chroma
//! total-variation regularizers.

use crate::error::{Error, Result};

/// Component weights of [`ycbcr_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub y: f64,
    pub cb: f64,
    pub cr: f64,
    pub laplacian: f64,
    /// Shared by the Cb and Cr total-variation terms.
    pub tv: f64,
}

impl LossWeights {
    /// `(Y, Cb, Cr, Laplacian, TV(Cb), TV(Cr))`.
    pub fn as_tuple(&self) -> (f64, f64, f64, f64, f64, f64) {
        (self.y, self.cb, self.cr, self.laplacian, self.tv, self.tv)
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            y: 1.0,
            cb: 0.6,
            cr: 0.6,
            laplacian: 0.15,
            tv: 0.1,
        }
    }
}

/// RGB → YCbCr matrix; rows give Y, and the Cb/Cr scale on `B−Y` and `R−Y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorMatrix {
    pub kr: f64,
    pub kg: f64,
    pub kb: f64,
    pub cb_scale: f64,
    pub cr_scale: f64,
}

impl ColorMatrix {
    /// BT.601, full range.
    pub const BT601: ColorMatrix = ColorMatrix {
        kr: 0.299,
        kg: 0.587,
        kb: 0.114,
        cb_scale: 0.564,
        cr_scale: 0.713,
    };
}

impl Default for ColorMatrix {
    fn default() -> Self {
        Self::BT601
    }
}

/// One real-valued channel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::BadSize(format!(
                "{} values for a {width}×{height} plane",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn constant(width: usize, height: usize, v: f64) -> Result<Self> {
        Self::new(width, height, vec![v; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    fn same_size(&self, o: &Plane) -> Result<()> {
        if (self.width, self.height) != (o.width, o.height) {
            return Err(Error::DimMismatch {
                expected: self.width * self.height,
                got: o.width * o.height,
            });
        }
        Ok(())
    }
}

/// Three planes of equal size, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    planes: [Plane; 3],
}

impl Image {
    /// Clamps every value into `[0, 1]`.
    pub fn new(mut planes: [Plane; 3]) -> Result<Self> {
        planes[0].same_size(&planes[1])?;
        planes[0].same_size(&planes[2])?;
        for p in &mut planes {
            p.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        Ok(Self { planes })
    }

    /// From interleaved 8-bit RGB.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * width * height {
            return Err(Error::BadSize(format!(
                "{} bytes for a {width}×{height} RGB image",
                bytes.len()
            )));
        }
        let chan = |c: usize| {
            Plane::new(
                width,
                height,
                bytes.chunks_exact(3).map(|px| px[c] as f64 / 255.0).collect(),
            )
        };
        Self::new([chan(0)?, chan(1)?, chan(2)?])
    }

    pub fn planes(&self) -> &[Plane; 3] {
        &self.planes
    }

    pub fn width(&self) -> usize {
        self.planes[0].width
    }

    pub fn height(&self) -> usize {
        self.planes[0].height
    }
}

/// Returns planes `(Y, Cb, Cr)`; Cb and Cr are centered on ½.
pub fn rgb_to_ycbcr(img: &Image, m: &ColorMatrix) -> [Plane; 3] {
    let [r, g, b] = &img.planes;
    let n = r.data.len();
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let yy = m.kr * r.data[i] + m.kg * g.data[i] + m.kb * b.data[i];
        y.push(yy);
        cb.push(0.5 + (b.data[i] - yy) * m.cb_scale);
        cr.push(0.5 + (r.data[i] - yy) * m.cr_scale);
    }
    let mk = |data| Plane {
        width: r.width,
        height: r.height,
        data,
    };
    [mk(y), mk(cb), mk(cr)]
}

/// 5-point Laplacian with replicate padding.
pub fn laplacian(p: &Plane) -> Plane {
    let (w, h) = (p.width, p.height);
    let at = |x: isize, y: isize| p.get(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            out.push(at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y));
        }
    }
    Plane {
        width: w,
        height: h,
        data: out,
    }
}

/// Anisotropic total variation: mean absolute horizontal difference plus mean
/// absolute vertical difference. A direction with no pairs contributes 0.
pub fn tv(p: &Plane) -> f64 {
    let (w, h) = (p.width, p.height);
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                sx += (p.get(x + 1, y) - p.get(x, y)).abs();
            }
            if y + 1 < h {
                sy += (p.get(x, y + 1) - p.get(x, y)).abs();
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    mean(sx, (w - 1) * h) + mean(sy, w * (h - 1))
}

fn mean_abs_diff(a: &Plane, b: &Plane) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64
}

/// Individual terms of the loss, unweighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub l1_y: f64,
    pub l1_cb: f64,
    pub l1_cr: f64,
    pub l1_laplacian: f64,
    pub tv_cb: f64,
    pub tv_cr: f64,
    pub total: f64,
}

/// Distortion of `decoded` against `reference`. The TV terms are taken on the
/// decoded chroma only.
pub fn ycbcr_loss_with(reference: &Image, decoded: &Image, w: &LossWeights, m: &ColorMatrix) -> Result<LossTerms> {
    reference.planes[0].same_size(&decoded.planes[0])?;
    let [ry, rcb, rcr] = rgb_to_ycbcr(reference, m);
    let [dy, dcb, dcr] = rgb_to_ycbcr(decoded, m);
    let l1_y = mean_abs_diff(&ry, &dy);
    let l1_cb = mean_abs_diff(&rcb, &dcb);
    let l1_cr = mean_abs_diff(&rcr, &dcr);
    let l1_laplacian = mean_abs_diff(&laplacian(&ry), &laplacian(&dy));
    let tv_cb = tv(&dcb);
    let tv_cr = tv(&dcr);
    let fidelity = w.y * l1_y + w.cb * l1_cb + w.cr * l1_cr + w.laplacian * l1_laplacian;
    Ok(LossTerms {
        l1_y,
        l1_cb,
        l1_cr,
        l1_laplacian,
        tv_cb,
        tv_cr,
        total: fidelity + w.tv * (tv_cb + tv_cr),
    })
}

pub fn ycbcr_loss(reference: &Image, decoded: &Image) -> Result<f64> {
    Ok(ycbcr_loss_with(reference, decoded, &LossWeights::default(), &ColorMatrix::BT601)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(w: usize, h: usize, rgb: [f64; 3]) -> Image {
        Image::new(rgb.map(|v| Plane::constant(w, h, v).unwrap())).unwrap()
    }

    fn ycc(rgb: [f64; 3]) -> [f64; 3] {
        rgb_to_ycbcr(&solid(1, 1, rgb), &ColorMatrix::BT601).map(|p| p.data[0])
    }

    #[test]
    fn achromatic_axis() {
        for (rgb, want) in [
            ([1.0; 3], [1.0, 0.5, 0.5]),
            ([0.0; 3], [0.0, 0.5, 0.5]),
            ([0.5; 3], [0.5; 3]),
        ] {
            let got = ycc(rgb);
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() < 1e-12, "{rgb:?}: {got:?}");
            }
        }
    }

    #[test]
    fn laplacian_kernel() {
        let c = laplacian(&Plane::constant(4, 3, 0.7).unwrap());
        assert!(c.data.iter().all(|v| *v == 0.0));

        let mut d = vec![0.0; 9];
        d[4] = 1.0;
        let l = laplacian(&Plane::new(3, 3, d).unwrap());
        assert_eq!(l.data, vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]);

        let ramp = Plane::new(
            5,
            4,
            (0..20).map(|i| 0.1 * (i % 5) as f64 + 0.03 * (i / 5) as f64).collect(),
        )
        .unwrap();
        let l = laplacian(&ramp);
        for y in 1..3 {
            for x in 1..4 {
                assert!(l.get(x, y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn total_variation() {
        assert_eq!(tv(&Plane::constant(3, 3, 0.2).unwrap()), 0.0);
        assert_eq!(tv(&Plane::new(2, 1, vec![0.0, 1.0]).unwrap()), 1.0);
        let checker = Plane::new(4, 4, (0..16).map(|i| ((i % 4 + i / 4) % 2) as f64).collect()).unwrap();
        assert!(tv(&checker) > 0.0);
    }

    #[test]
    fn loss_properties() {
        let w = LossWeights::default();
        assert_eq!(w.as_tuple(), (1.0, 0.6, 0.6, 0.15, 0.1, 0.1));
        let flat = solid(4, 4, [0.3, 0.6, 0.2]);
        assert_eq!(ycbcr_loss(&flat, &flat).unwrap(), 0.0);

        let g = solid(8, 8, [0.5; 3]);
        let e = 0.05;
        // Y moves by e with chroma fixed, then Cb moves by e with Y and Cr fixed
        let luma = solid(8, 8, [0.5 + e; 3]);
        let db = e / 0.564;
        let chroma = solid(8, 8, [0.5, 0.5 - 0.114 / 0.587 * db, 0.5 + db]);
        let tl = ycbcr_loss_with(&g, &luma, &w, &ColorMatrix::BT601).unwrap();
        let tc = ycbcr_loss_with(&g, &chroma, &w, &ColorMatrix::BT601).unwrap();
        assert!((tl.l1_y - e).abs() < 1e-12 && (tc.l1_cb - e).abs() < 1e-12 && tc.l1_y < 1e-12);
        assert!(tl.total > tc.total);

        let a = Image::from_rgb8(2, 2, &[10, 200, 30, 40, 50, 60, 255, 0, 128, 1, 2, 3]).unwrap();
        let b = Image::from_rgb8(2, 2, &[12, 190, 35, 40, 52, 61, 250, 5, 128, 0, 0, 0]).unwrap();
        let ab = ycbcr_loss_with(&a, &b, &w, &ColorMatrix::BT601).unwrap();
        let ba = ycbcr_loss_with(&b, &a, &w, &ColorMatrix::BT601).unwrap();
        assert_eq!(ab.l1_y, ba.l1_y);
        assert_eq!(ab.l1_laplacian, ba.l1_laplacian);
        assert!(ab.total >= 0.0);
        assert!(ycbcr_loss(&a, &Image::from_rgb8(3, 1, &[0; 9]).unwrap()).is_err());
    }
}

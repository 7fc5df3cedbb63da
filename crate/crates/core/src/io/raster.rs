//! Binary PPM/PGM rasters and orthographic world renders.

use crate::error::{Error, Result};
use crate::flowmodel::ToyDecoders;
use crate::lattice::{OccupancyField, SegmentMap, SparseLatent};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0; 3]; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, px: [u8; 3]) {
        self.pixels[row * self.width + col] = px;
    }

    /// Binary `P6` encoding with maxval 255.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let (magic, width, height, data) = parse_netpbm(bytes)?;
        if magic != "P6" {
            return Err(Error::Format(format!("expected P6, found {magic}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "P6 {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels: data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Binary `P5` encoding with maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let (magic, width, height, data) = parse_netpbm(bytes)?;
        if magic != "P5" || data.len() != width * height {
            return Err(Error::Format("malformed P5 raster".into()));
        }
        Ok(Self {
            width,
            height,
            pixels: data.to_vec(),
        })
    }
}

/// Splits a binary netpbm file into magic, width, height and payload. The
/// header is four whitespace-separated tokens; maxval must be 255.
fn parse_netpbm(bytes: &[u8]) -> Result<(String, usize, usize, &[u8])> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("truncated raster header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the payload
    if i >= bytes.len() {
        return Err(Error::Format("raster has no payload".into()));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad raster header field {s:?}")))
    };
    if num(&tokens[3])? != 255 {
        return Err(Error::Format(format!("unsupported maxval {}", tokens[3])));
    }
    Ok((
        tokens[0].clone(),
        num(&tokens[1])?,
        num(&tokens[2])?,
        &bytes[i + 1..],
    ))
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Density and color of an active voxel: decoded from its appearance
/// feature, or a height shade when no feature is present.
fn shade(
    p: [usize; 3],
    depth: usize,
    latent: Option<&SparseLatent>,
    dec: &ToyDecoders,
) -> (f64, [u8; 3]) {
    if let Some(f) = latent.and_then(|l| l.get(p)) {
        let [a, r, g, b] = dec.decode_appearance(f);
        (a, [to_byte(r), to_byte(g), to_byte(b)])
    } else {
        let v = to_byte((p[0] + 1) as f64 / depth as f64);
        (1.0, [v, v, v])
    }
}

/// Looking down the vertical axis: each `(y, x)` column shows its active
/// voxel of largest decoded density, the higher one on ties. Rows are `y`,
/// columns are `x`; empty columns stay black.
pub fn render_top_view(
    occ: &OccupancyField,
    latent: Option<&SparseLatent>,
    dec: &ToyDecoders,
) -> RgbImage {
    let dims = occ.dims();
    let mut img = RgbImage::new(dims.w, dims.h);
    for y in 0..dims.h {
        for x in 0..dims.w {
            let mut best: Option<(f64, [u8; 3])> = None;
            for z in (0..dims.d).rev() {
                if occ.is_active([z, y, x]) {
                    let s = shade([z, y, x], dims.d, latent, dec);
                    if best.is_none_or(|b| s.0 > b.0) {
                        best = Some(s);
                    }
                }
            }
            if let Some((_, px)) = best {
                img.set(y, x, px);
            }
        }
    }
    img
}

/// Looking along `+y`: rows are heights from the top down, columns are `x`,
/// and each pixel shows the densest active voxel, the nearest on ties.
pub fn render_side_view(
    occ: &OccupancyField,
    latent: Option<&SparseLatent>,
    dec: &ToyDecoders,
) -> RgbImage {
    let dims = occ.dims();
    let mut img = RgbImage::new(dims.w, dims.d);
    for z in 0..dims.d {
        for x in 0..dims.w {
            let mut best: Option<(f64, [u8; 3])> = None;
            for y in 0..dims.h {
                if occ.is_active([z, y, x]) {
                    let s = shade([z, y, x], dims.d, latent, dec);
                    if best.is_none_or(|b| s.0 > b.0) {
                        best = Some(s);
                    }
                }
            }
            if let Some((_, px)) = best {
                img.set(dims.d - 1 - z, x, px);
            }
        }
    }
    img
}

/// Height of the topmost active voxel per column, scaled to 0..=255.
pub fn render_height_map(occ: &OccupancyField) -> GrayImage {
    let dims = occ.dims();
    let mut pixels = vec![0u8; dims.h * dims.w];
    for y in 0..dims.h {
        for x in 0..dims.w {
            if let Some(z) = (0..dims.d).rev().find(|&z| occ.is_active([z, y, x])) {
                pixels[y * dims.w + x] = to_byte((z + 1) as f64 / dims.d as f64);
            }
        }
    }
    GrayImage {
        width: dims.w,
        height: dims.h,
        pixels,
    }
}

const PALETTE: [[u8; 3]; 8] = [
    [86, 156, 70],
    [170, 90, 60],
    [220, 200, 120],
    [70, 110, 190],
    [150, 80, 170],
    [60, 170, 170],
    [200, 60, 90],
    [140, 140, 140],
];

/// One palette color per label, assigned in ascending label order.
pub fn render_label_map(map: &SegmentMap) -> RgbImage {
    let labels = map.labels();
    let mut img = RgbImage::new(map.width(), map.height());
    for r in 0..map.height() {
        for c in 0..map.width() {
            let k = labels.binary_search(&map.label_at(r, c)).unwrap_or(0);
            img.set(r, c, PALETTE[k % PALETTE.len()]);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::GridDims;
    use std::collections::BTreeMap;

    #[test]
    fn ppm_round_trip_and_header() {
        let mut img = RgbImage::new(3, 2);
        img.set(1, 2, [1, 2, 3]);
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        assert_eq!(RgbImage::from_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage {
            width: 2,
            height: 2,
            pixels: vec![0, 10, 200, 255],
        };
        assert_eq!(GrayImage::from_pgm(&img.to_pgm()).unwrap(), img);
        assert!(RgbImage::from_ppm(&img.to_pgm()).is_err());
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n1 1\n255\n".to_vec();
        bytes.push(7);
        assert_eq!(GrayImage::from_pgm(&bytes).unwrap().pixels, vec![7]);
    }

    #[test]
    fn top_view_picks_densest_voxel() {
        let dims = GridDims::new(3, 1, 2, 1).unwrap();
        let occ = OccupancyField::from_active(dims, |p| p[2] == 0 && p[0] < 2).unwrap();
        let mut dec = ToyDecoders::default();
        dec.app_weight.iter_mut().for_each(|w| *w = 0.0);
        dec.app_weight[0] = 0.5; // density follows channel 0
        dec.app_weight[4 + 1] = 0.5; // red follows channel 1
        let latent = SparseLatent::new(
            dims.with_channels(4).unwrap(),
            &[[0, 0, 0], [1, 0, 0]],
            &[
                0.9, 0.9, 0.0, 0.0, // dense, bright red
                -0.5, -1.0, 0.0, 0.0,
            ],
        )
        .unwrap();
        let img = render_top_view(&occ, Some(&latent), &dec);
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.get(0, 0)[0], to_byte(0.5 + 0.45));
        assert_eq!(img.get(0, 1), [0, 0, 0]);
        let side = render_side_view(&occ, Some(&latent), &dec);
        assert_eq!((side.width, side.height), (2, 3));
        assert_eq!(side.get(0, 0), [0, 0, 0]);
        assert_ne!(side.get(2, 0), [0, 0, 0]);
    }

    #[test]
    fn height_map_and_label_colors() {
        let dims = GridDims::new(4, 1, 2, 1).unwrap();
        let occ = OccupancyField::from_active(dims, |p| p[0] <= p[2]).unwrap();
        assert_eq!(
            render_height_map(&occ).pixels,
            vec![to_byte(0.25), to_byte(0.5)]
        );
        let prompts: BTreeMap<u32, String> = [(3, "a".to_string()), (9, "b".to_string())].into();
        let map = SegmentMap::new(1, 2, vec![9, 3], prompts).unwrap();
        let img = render_label_map(&map);
        assert_eq!(img.get(0, 0), PALETTE[1]);
        assert_eq!(img.get(0, 1), PALETTE[0]);
    }
}

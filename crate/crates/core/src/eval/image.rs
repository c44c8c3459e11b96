//! Binary PPM renderings of matrices and label ribbons.

use std::fs;
use std::path::Path;

use crate::error::{IoContext, Result};

/// RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, colour: [u8; 3]) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                self.pixels[y * self.width + x] = colour;
            }
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut buf = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            buf.extend_from_slice(p);
        }
        buf
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).at(path)
    }
}

/// Colours used for the seven phases in ribbons.
pub const PHASE_PALETTE: [[u8; 3]; 7] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
];

/// White-to-dark-blue heat map, one `cell x cell` square per entry.
/// Values are clamped to `[0, 1]`.
pub fn heatmap(m: &[Vec<f64>], cell: usize) -> Image {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let mut img = Image::new(cols * cell, rows * cell, [255, 255, 255]);
    for (r, row) in m.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let v = v.clamp(0.0, 1.0);
            let colour = [
                (255.0 * (1.0 - v)) as u8,
                (255.0 * (1.0 - 0.8 * v)) as u8,
                (255.0 * (1.0 - 0.4 * v)) as u8,
            ];
            img.fill_rect(c * cell, r * cell, cell, cell, colour);
        }
    }
    img
}

/// Phase strip: time runs left to right, `scale` pixels per frame.
pub fn phase_ribbon(labels: &[usize], scale: usize, height: usize) -> Image {
    let mut img = Image::new(labels.len() * scale, height, [0, 0, 0]);
    for (t, &z) in labels.iter().enumerate() {
        img.fill_rect(t * scale, 0, scale, height, PHASE_PALETTE[z % PHASE_PALETTE.len()]);
    }
    img
}

/// One row per tool, dark where the tool is present.
pub fn tool_ribbon(tools: &[Vec<u8>], scale: usize, row_height: usize) -> Image {
    let n = tools.first().map_or(0, Vec::len);
    let mut img = Image::new(tools.len() * scale, n * row_height, [255, 255, 255]);
    for (t, y) in tools.iter().enumerate() {
        for (c, &v) in y.iter().enumerate() {
            if v == 1 {
                img.fill_rect(t * scale, c * row_height, scale, row_height, [40, 40, 40]);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_size() {
        let img = heatmap(&[vec![0.0, 1.0], vec![0.5, 0.25]], 3);
        assert_eq!((img.width, img.height), (6, 6));
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n6 6\n255\n"));
        assert_eq!(ppm.len(), 11 + 6 * 6 * 3);
        assert_eq!(img.pixels[0], [255, 255, 255]);
    }

    #[test]
    fn ribbons() {
        let r = phase_ribbon(&[0, 0, 1], 2, 4);
        assert_eq!(r.width, 6);
        assert_eq!(r.pixels[5], PHASE_PALETTE[1]);
        let t = tool_ribbon(&[vec![1, 0], vec![0, 1]], 1, 2);
        assert_eq!((t.width, t.height), (2, 4));
        assert_eq!(t.pixels[0], [40, 40, 40]);
        assert_eq!(t.pixels[1], [255, 255, 255]);
    }
}

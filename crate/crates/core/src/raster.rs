//! Minimal in-memory RGB raster used for the synthetic screenshot channel,
//! set-of-mark overlays, and coordinate-annotated failure shots.
//!
//! Handles serialize as `{width, height, digest}` only; pixel data never
//! enters trajectory logs.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::sync::Arc;

/// Immutable raster handle. Equality is by dimensions and content digest.
#[derive(Clone, Debug)]
pub struct RasterHandle {
    width: u32,
    height: u32,
    digest: String,
    pixels: Option<Arc<Vec<u8>>>,
}

impl RasterHandle {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Hex digest of the RGB pixel content (FNV-1a 64).
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Raw RGB8 pixels, when this handle still carries them. Handles
    /// deserialized from a log carry only the digest.
    pub fn pixels(&self) -> Option<&[u8]> {
        self.pixels.as_deref().map(|v| v.as_slice())
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, String> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| format!("png decode: {e}"))?
            .to_rgb8();
        let (width, height) = img.dimensions();
        Ok(Canvas {
            width,
            height,
            pixels: img.into_raw(),
        }
        .freeze())
    }

    pub fn to_png(&self) -> Result<Vec<u8>, String> {
        let pixels = self.pixels().ok_or("raster holds no pixel data")?;
        let img = image::RgbImage::from_raw(self.width, self.height, pixels.to_vec())
            .ok_or("pixel buffer size mismatch")?;
        let mut out = Vec::new();
        img.write_to(
            &mut std::io::Cursor::new(&mut out),
            image::ImageFormat::Png,
        )
        .map_err(|e| format!("png encode: {e}"))?;
        Ok(out)
    }

    /// Mutable copy for further drawing.
    pub fn to_canvas(&self) -> Option<Canvas> {
        self.pixels().map(|p| Canvas {
            width: self.width,
            height: self.height,
            pixels: p.to_vec(),
        })
    }
}

impl PartialEq for RasterHandle {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.digest == other.digest
    }
}

impl Serialize for RasterHandle {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire<'a> {
            width: u32,
            height: u32,
            digest: &'a str,
        }
        Wire {
            width: self.width,
            height: self.height,
            digest: &self.digest,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RasterHandle {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            width: u32,
            height: u32,
            digest: String,
        }
        let w = Wire::deserialize(deserializer)?;
        if w.width == 0 || w.height == 0 {
            return Err(D::Error::custom("zero raster dimension"));
        }
        Ok(RasterHandle {
            width: w.width,
            height: w.height,
            digest: w.digest,
            pixels: None,
        })
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Mutable RGB8 drawing surface; `freeze` produces an immutable handle.
#[derive(Clone)]
pub struct Canvas {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

pub type Rgb = (u8, u8, u8);

/// 3x5 digit bitmaps, row-major, one bit per pixel.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111], // 0
    [0b010, 0b110, 0b010, 0b010, 0b111], // 1
    [0b111, 0b001, 0b111, 0b100, 0b111], // 2
    [0b111, 0b001, 0b111, 0b001, 0b111], // 3
    [0b101, 0b101, 0b111, 0b001, 0b001], // 4
    [0b111, 0b100, 0b111, 0b001, 0b111], // 5
    [0b111, 0b100, 0b111, 0b101, 0b111], // 6
    [0b111, 0b001, 0b010, 0b010, 0b010], // 7
    [0b111, 0b101, 0b111, 0b101, 0b111], // 8
    [0b111, 0b101, 0b111, 0b001, 0b111], // 9
];

impl Canvas {
    pub fn solid(width: u32, height: u32, color: Rgb) -> Self {
        let mut pixels = Vec::with_capacity((width * height * 3) as usize);
        for _ in 0..width * height {
            pixels.extend_from_slice(&[color.0, color.1, color.2]);
        }
        Canvas {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn put(&mut self, x: i64, y: i64, color: Rgb) {
        if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
            return;
        }
        let idx = ((y as u32 * self.width + x as u32) * 3) as usize;
        self.pixels[idx] = color.0;
        self.pixels[idx + 1] = color.1;
        self.pixels[idx + 2] = color.2;
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, color: Rgb) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, color);
            }
        }
    }

    pub fn outline_rect(&mut self, x: i64, y: i64, w: i64, h: i64, color: Rgb) {
        for xx in x..x + w {
            self.put(xx, y, color);
            self.put(xx, y + h - 1, color);
        }
        for yy in y..y + h {
            self.put(x, yy, color);
            self.put(x + w - 1, yy, color);
        }
    }

    /// Stamps a decimal number with the built-in 3x5 font. Returns the drawn
    /// width in pixels.
    pub fn draw_number(&mut self, x: i64, y: i64, n: usize, scale: i64, color: Rgb) -> i64 {
        let digits: Vec<usize> = n
            .to_string()
            .bytes()
            .map(|b| (b - b'0') as usize)
            .collect();
        let mut cx = x;
        for d in digits {
            let glyph = DIGITS[d];
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..3 {
                    if bits & (0b100 >> col) != 0 {
                        self.fill_rect(
                            cx + col as i64 * scale,
                            y + row as i64 * scale,
                            scale,
                            scale,
                            color,
                        );
                    }
                }
            }
            cx += 4 * scale;
        }
        cx - x
    }

    pub fn draw_crosshair(&mut self, x: i64, y: i64, arm: i64, color: Rgb) {
        for d in -arm..=arm {
            self.put(x + d, y, color);
            self.put(x, y + d, color);
        }
        self.outline_rect(x - arm, y - arm, 2 * arm + 1, 2 * arm + 1, color);
    }

    pub fn freeze(self) -> RasterHandle {
        let digest = format!("{:016x}", fnv1a64(&self.pixels));
        RasterHandle {
            width: self.width,
            height: self.height,
            digest,
            pixels: Some(Arc::new(self.pixels)),
        }
    }
}

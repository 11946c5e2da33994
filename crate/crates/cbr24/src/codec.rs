//! Deterministic card images: a 90x90 grayscale card with one number per
//! 45x45 quadrant, rendered from a fixed glyph atlas and recognized by
//! template matching. Images round-trip through binary PGM (P5).

use crate::domain::Puzzle;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

pub const IMAGE_SIZE: usize = 90;
pub const QUADRANT: usize = 45;
const PIXELS: usize = IMAGE_SIZE * IMAGE_SIZE;
const QUAD_PIXELS: usize = QUADRANT * QUADRANT;

const BG: u8 = 255;
const INK: u8 = 0;

/// 5x7 digit font, scaled up 3x when drawn (15x21 per digit).
const FONT: [[&str; 7]; 10] = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
];

const SCALE: usize = 3;
const DIGIT_W: usize = 5 * SCALE;
const DIGIT_H: usize = 7 * SCALE;
const DIGIT_GAP: usize = SCALE;

/// A 90x90 8-bit grayscale card image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CardImage {
    pixels: Vec<u8>,
}

impl CardImage {
    fn blank() -> Self {
        CardImage {
            pixels: vec![BG; PIXELS],
        }
    }

    pub fn from_pixels(pixels: Vec<u8>) -> Result<Self, PgmError> {
        if pixels.len() != PIXELS {
            return Err(PgmError::BadDimensions {
                width: pixels.len(),
                height: 1,
            });
        }
        Ok(CardImage { pixels })
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * IMAGE_SIZE + x]
    }

    fn quadrant(&self, q: usize) -> [u8; QUAD_PIXELS] {
        let (x0, y0) = quadrant_origin(q);
        let mut out = [0u8; QUAD_PIXELS];
        for y in 0..QUADRANT {
            for x in 0..QUADRANT {
                out[y * QUADRANT + x] = self.get(x0 + x, y0 + y);
            }
        }
        out
    }

    /// Flip roughly `density * pixels` pixels to pure black or white,
    /// deterministically for a given seed.
    pub fn add_noise(&mut self, density: f64, seed: u64) {
        if density <= 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for px in self.pixels.iter_mut() {
            if rng.random::<f64>() < density {
                *px = if rng.random::<bool>() { BG } else { INK };
            }
        }
    }

    /// Binary PGM (P5) encoding.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", IMAGE_SIZE, IMAGE_SIZE).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self, PgmError> {
        let (width, height, raster) = parse_pgm(bytes)?;
        if width != IMAGE_SIZE || height != IMAGE_SIZE {
            return Err(PgmError::BadDimensions { width, height });
        }
        Ok(CardImage { pixels: raster })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), PgmError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pgm_bytes())?;
        Ok(())
    }

    pub fn read_pgm(path: &Path) -> Result<Self, PgmError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_pgm_bytes(&bytes)
    }
}

/// Quadrant order follows the sorted quadruple: top-left, top-right,
/// bottom-left, bottom-right.
fn quadrant_origin(q: usize) -> (usize, usize) {
    match q {
        0 => (0, 0),
        1 => (QUADRANT, 0),
        2 => (0, QUADRANT),
        3 => (QUADRANT, QUADRANT),
        _ => unreachable!(),
    }
}

fn draw_digit(buf: &mut [u8; QUAD_PIXELS], digit: usize, x0: usize, y0: usize) {
    for (row, bits) in FONT[digit].iter().enumerate() {
        for (col, c) in bits.bytes().enumerate() {
            if c == b'1' {
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        let x = x0 + col * SCALE + dx;
                        let y = y0 + row * SCALE + dy;
                        buf[y * QUADRANT + x] = INK;
                    }
                }
            }
        }
    }
}

fn render_value(value: i64) -> [u8; QUAD_PIXELS] {
    let mut buf = [BG; QUAD_PIXELS];
    let y0 = (QUADRANT - DIGIT_H) / 2;
    if value < 10 {
        let x0 = (QUADRANT - DIGIT_W) / 2;
        draw_digit(&mut buf, value as usize, x0, y0);
    } else {
        let total = DIGIT_W * 2 + DIGIT_GAP;
        let x0 = (QUADRANT - total) / 2;
        draw_digit(&mut buf, (value / 10) as usize, x0, y0);
        draw_digit(&mut buf, (value % 10) as usize, x0 + DIGIT_W + DIGIT_GAP, y0);
    }
    buf
}

fn templates() -> &'static [[u8; QUAD_PIXELS]; 13] {
    static TEMPLATES: OnceLock<[[u8; QUAD_PIXELS]; 13]> = OnceLock::new();
    TEMPLATES.get_or_init(|| std::array::from_fn(|i| render_value(i as i64 + 1)))
}

/// Sum of absolute pixel differences.
fn sad(a: &[u8], b: &[u8]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as i64 - y as i64).unsigned_abs())
        .sum()
}

/// Rejection threshold: half the largest distance between any template and a
/// blank quadrant. A clean or lightly noised glyph sits far below this; a
/// quadrant with no glyph at all sits far above it.
pub fn no_match_threshold() -> u64 {
    static THRESHOLD: OnceLock<u64> = OnceLock::new();
    *THRESHOLD.get_or_init(|| {
        let blank = [BG; QUAD_PIXELS];
        templates()
            .iter()
            .map(|t| sad(t, &blank))
            .max()
            .unwrap()
            / 2
    })
}

/// Render the puzzle onto a fresh card. Deterministic: equal puzzles yield
/// identical images.
pub fn render(p: &Puzzle) -> CardImage {
    let mut img = CardImage::blank();
    for (q, &value) in p.numbers().iter().enumerate() {
        let (x0, y0) = quadrant_origin(q);
        let quad = render_value(value);
        for y in 0..QUADRANT {
            for x in 0..QUADRANT {
                img.pixels[(y0 + y) * IMAGE_SIZE + (x0 + x)] = quad[y * QUADRANT + x];
            }
        }
    }
    img
}

#[derive(Error, Debug)]
pub enum RecognizeError {
    #[error("quadrant {quadrant} does not match any glyph (best distance {distance}, threshold {threshold})")]
    NoGlyphMatch {
        quadrant: usize,
        distance: u64,
        threshold: u64,
    },
}

/// Recognize the four quadrant values by nearest template. Fails with
/// NoGlyphMatch when the best template is still too far away.
pub fn recognize(img: &CardImage) -> Result<Puzzle, RecognizeError> {
    let threshold = no_match_threshold();
    let mut nums = [0i64; 4];
    for q in 0..4 {
        let quad = img.quadrant(q);
        let (value, distance) = templates()
            .iter()
            .enumerate()
            .map(|(i, t)| (i as i64 + 1, sad(t, &quad)))
            .min_by_key(|&(_, d)| d)
            .unwrap();
        if distance > threshold {
            return Err(RecognizeError::NoGlyphMatch {
                quadrant: q,
                distance,
                threshold,
            });
        }
        nums[q] = value;
    }
    // Rendered cards hold the sorted quadruple, so this never reorders for
    // images produced by render().
    Ok(Puzzle::new(nums).expect("template values are always in range"))
}

#[derive(Error, Debug)]
pub enum PgmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a binary PGM (expected magic P5)")]
    BadMagic,
    #[error("malformed PGM header")]
    BadHeader,
    #[error("unsupported maxval {0} (expected 255)")]
    BadMaxval(usize),
    #[error("expected a 90x90 image, got {width}x{height}")]
    BadDimensions { width: usize, height: usize },
    #[error("raster shorter than header promises")]
    TruncatedRaster,
}

/// Minimal P5 reader: magic, three header tokens (whitespace separated,
/// '#' comments allowed), one whitespace byte, then the raster.
fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), PgmError> {
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let mut pos = 2;
    let mut tokens = [0usize; 3];
    for token in tokens.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(PgmError::BadHeader);
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| PgmError::BadHeader)?;
        *token = text.parse().map_err(|_| PgmError::BadHeader)?;
    }
    if tokens[2] != 255 {
        return Err(PgmError::BadMaxval(tokens[2]));
    }
    // exactly one whitespace byte separates header from raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(PgmError::BadHeader);
    }
    pos += 1;
    let (width, height) = (tokens[0], tokens[1]);
    let need = width
        .checked_mul(height)
        .ok_or(PgmError::BadHeader)?;
    if bytes.len() < pos + need {
        return Err(PgmError::TruncatedRaster);
    }
    Ok((width, height, bytes[pos..pos + need].to_vec()))
}

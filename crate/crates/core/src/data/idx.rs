//! IDX ingestion, a seven-segment glyph generator standing in for digit
//! images, and the colorized variant used as a shifted digit domain.

use super::{DataError, DomainDataset, Role};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::Format { what: what.into(), offset, reason: "truncated header".into() })
}

fn check_magic(bytes: &[u8], want: u32, what: &str) -> Result<(), DataError> {
    let got = be_u32(bytes, 0, what)?;
    if got != want {
        return Err(DataError::Format {
            what: what.into(),
            offset: 0,
            reason: format!("bad magic {got:#010x}, expected {want:#010x}"),
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, what: &str) -> Result<&'a [u8], DataError> {
    bytes.get(start..start + len).ok_or_else(|| DataError::Format {
        what: what.into(),
        offset: bytes.len(),
        reason: format!("truncated payload: expected {len} bytes from offset {start}"),
    })
}

/// Parses an IDX image file: returns `(count, rows, cols, pixels)` with
/// pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>), DataError> {
    let what = "idx images";
    check_magic(bytes, IMAGE_MAGIC, what)?;
    let count = be_u32(bytes, 4, what)? as usize;
    let rows = be_u32(bytes, 8, what)? as usize;
    let cols = be_u32(bytes, 12, what)? as usize;
    let raw = payload(bytes, 16, count * rows * cols, what)?;
    Ok((count, rows, cols, raw.iter().map(|&b| f64::from(b) / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, DataError> {
    let what = "idx labels";
    check_magic(bytes, LABEL_MAGIC, what)?;
    let count = be_u32(bytes, 4, what)? as usize;
    Ok(payload(bytes, 8, count, what)?.iter().map(|&b| b as usize).collect())
}

/// Reads an image/label IDX pair into a fully labeled grayscale domain.
pub fn load_idx(images: &Path, labels: &Path, domain: usize) -> Result<DomainDataset, DataError> {
    let image_bytes = std::fs::read(images)?;
    let label_bytes = std::fs::read(labels)?;
    let (count, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != count {
        return Err(DataError::Format {
            what: "idx labels".into(),
            offset: 4,
            reason: format!("{} labels for {count} images", labels.len()),
        });
    }
    let digest = hex::encode(Sha256::new().chain_update(&image_bytes).chain_update(&label_bytes).finalize());
    Ok(DomainDataset {
        domain,
        classes: labels.iter().max().map_or(0, |m| m + 1),
        sample_shape: vec![1, rows, cols],
        inputs: pixels,
        roles: vec![Role::Labeled; count],
        labels,
        provenance: format!("idx sha256={digest}"),
    })
}

// Seven-segment encodings, bit 6 = segment a down to bit 0 = segment g.
const SEGMENTS: [u8; 10] = [
    0b111_1110, // 0: a b c d e f
    0b011_0000, // 1: b c
    0b110_1101, // 2: a b d e g
    0b111_1001, // 3: a b c d g
    0b011_0011, // 4: b c f g
    0b101_1011, // 5: a c d f g
    0b101_1111, // 6: a c d e f g
    0b111_0000, // 7: a b c
    0b111_1111, // 8
    0b111_1011, // 9: a b c d f g
];

fn draw_glyph(class: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut img = vec![0.0; size * size];
    let w = (size as f64 * 0.35).round() as i64;
    let h = (size as f64 * 0.3).round() as i64;
    let jitter = (size / 9).max(1) as i64;
    let x0 = (size as i64 - w) / 2 + rng.random_range(-jitter..=jitter);
    let y0 = (size as i64 - 2 * h) / 2 + rng.random_range(-jitter..=jitter);
    let thick = rng.random_range(1..=2i64);
    let ink = rng.random_range(0.7..1.0);
    let mut line = |xa: i64, ya: i64, xb: i64, yb: i64| {
        for y in ya.min(yb) - thick / 2..=ya.max(yb) + thick / 2 {
            for x in xa.min(xb) - thick / 2..=xa.max(xb) + thick / 2 {
                if (0..size as i64).contains(&x) && (0..size as i64).contains(&y) {
                    img[y as usize * size + x as usize] = ink;
                }
            }
        }
    };
    let bits = SEGMENTS[class % 10];
    let (x1, ym, y2) = (x0 + w, y0 + h, y0 + 2 * h);
    let strokes = [
        (x0, y0, x1, y0), // a
        (x1, y0, x1, ym), // b
        (x1, ym, x1, y2), // c
        (x0, y2, x1, y2), // d
        (x0, ym, x0, y2), // e
        (x0, y0, x0, ym), // f
        (x0, ym, x1, ym), // g
    ];
    for (s, &(xa, ya, xb, yb)) in strokes.iter().enumerate() {
        if bits & (1 << (6 - s)) != 0 {
            line(xa, ya, xb, yb);
        }
    }
    for v in &mut img {
        *v = (*v + rng.random_range(-0.05..0.05f64)).clamp(0.0, 1.0);
    }
    img
}

/// Grayscale seven-segment digits (`[1, size, size]`) with random placement,
/// stroke width and ink, grouped by class.
pub fn synth_glyphs(classes: usize, per_class: usize, size: usize, seed: u64) -> Result<DomainDataset, DataError> {
    if !(2..=10).contains(&classes) || per_class == 0 || size < 12 {
        return Err(DataError::Invalid(format!(
            "glyphs need 2-10 classes, positive per_class and size >= 12 (got {classes}, {per_class}, {size})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(classes * per_class * size * size);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for _ in 0..per_class {
            inputs.extend(draw_glyph(c, size, &mut rng));
            labels.push(c);
        }
    }
    Ok(DomainDataset {
        domain: 0,
        classes,
        sample_shape: vec![1, size, size],
        inputs,
        roles: vec![Role::Labeled; labels.len()],
        labels,
        provenance: format!("glyphs classes={classes} per_class={per_class} size={size} seed={seed}"),
    })
}

/// Composites every grayscale image onto a random colored, noisy background
/// (`|background - pixel|` per channel), producing `[3, h, w]` samples with
/// unchanged labels.
pub fn colorize_digits(ds: &DomainDataset, seed: u64) -> Result<DomainDataset, DataError> {
    let [1, h, w] = ds.sample_shape[..] else {
        return Err(DataError::Invalid(format!("expected grayscale [1, h, w] samples, got {:?}", ds.sample_shape)));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = h * w;
    let mut inputs = Vec::with_capacity(ds.len() * 3 * plane);
    for i in 0..ds.len() {
        let src = ds.sample(i);
        let bg: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let noise: Vec<f64> = (0..plane).map(|_| rng.random_range(-0.1..0.1)).collect();
        for b in bg {
            inputs.extend(src.iter().zip(&noise).map(|(x, n)| ((b + n).clamp(0.0, 1.0) - x).abs()));
        }
    }
    Ok(DomainDataset {
        domain: ds.domain,
        classes: ds.classes,
        sample_shape: vec![3, h, w],
        inputs,
        labels: ds.labels.clone(),
        roles: ds.roles.clone(),
        provenance: format!("{} | colorized seed={seed}", ds.provenance),
    })
}

/// Replicates a grayscale domain across three channels so it can share a
/// network with colorized domains.
pub fn gray_to_rgb(ds: &DomainDataset) -> Result<DomainDataset, DataError> {
    let [1, h, w] = ds.sample_shape[..] else {
        return Err(DataError::Invalid(format!("expected grayscale [1, h, w] samples, got {:?}", ds.sample_shape)));
    };
    let mut inputs = Vec::with_capacity(ds.inputs.len() * 3);
    for i in 0..ds.len() {
        for _ in 0..3 {
            inputs.extend_from_slice(ds.sample(i));
        }
    }
    Ok(DomainDataset { sample_shape: vec![3, h, w], inputs, ..ds.clone() })
}

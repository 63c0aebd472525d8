use std::fs;
use std::path::Path;

use super::{to_grayscale, trimap_to_thermogram, Plane, Thermogram, TriMap};
use crate::error::{Error, Result};

/// Reads a binary 8-bit PGM (`P5`). Maxvals below 255 are stretched to 0..255.
pub fn read_pgm(path: &Path) -> Result<Thermogram> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_pgm(bytes: &[u8]) -> Result<Thermogram> {
    let mut pos = 0;
    let mut header = [0usize; 3];
    let magic = next_token(bytes, &mut pos).ok_or_else(|| Error::Format("empty file".into()))?;
    if magic != b"P5" {
        return Err(Error::Format("not a binary PGM (missing P5 magic)".into()));
    }
    for slot in &mut header {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| Error::Format("truncated header".into()))?;
        *slot = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("non-numeric header field".into()))?;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("maxval {maxval} is not 8-bit")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::Format(format!("expected {n} raster bytes")))?;
    let pixels = raster
        .iter()
        .map(|&b| super::round_half_up(f64::from(b) * 255.0 / maxval as f64).min(255.0))
        .collect();
    Thermogram::new(height, width, pixels, super::Scale::Byte)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        match bytes.get(*pos)? {
            b'#' => {
                while *bytes.get(*pos)? != b'\n' {
                    *pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|c| !c.is_ascii_whitespace()) {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

/// Writes a binary 8-bit PGM; unit-scale images are rescaled to 0..255.
pub fn write_pgm(t: &Thermogram, path: &Path) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", t.width(), t.height()).into_bytes();
    out.extend(t.to_bytes());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_trimap_pgm(m: &TriMap, path: &Path) -> Result<()> {
    write_pgm(&trimap_to_thermogram(m), path)
}

/// Reads an 8-bit gray, gray+alpha, RGB or RGBA PNG; color is converted to luma.
pub fn read_png(path: &Path) -> Result<Thermogram> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::EXPAND);
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let data = &buf[..info.buffer_size()];
    let channels = info.color_type.samples();
    match channels {
        1 | 2 => Thermogram::from_bytes(h, w, &data.iter().step_by(channels).copied().collect::<Vec<_>>()),
        3 | 4 => {
            let plane = |c: usize| Plane {
                height: h,
                width: w,
                values: data.iter().skip(c).step_by(channels).copied().collect(),
            };
            to_grayscale(&plane(0), &plane(1), &plane(2))
        }
        n => Err(bad(format!("unsupported channel count {n}"))),
    }
}

/// Dispatches on extension: `.pgm` or `.png`.
pub fn read_image(path: &Path) -> Result<Thermogram> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pgm") => read_pgm(path),
        Some("png") => read_png(path),
        _ => Err(Error::Format(format!("{}: unsupported image type", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{amt_threshold, Scale};

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let t = Thermogram::from_bytes(2, 3, &[0, 10, 20, 128, 254, 255]).unwrap();
        write_pgm(&t, &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), t);
        let raw = fs::read(&path).unwrap();
        assert!(raw.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(raw.len(), 11 + 6);
    }

    #[test]
    fn pgm_header_comments_and_maxval() {
        let mut data = b"P5\n# comment\n2 1\n# another\n15\n".to_vec();
        data.extend([0u8, 15]);
        let t = parse_pgm(&data).unwrap();
        assert_eq!(t.pixels(), &[0.0, 255.0]);
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn trimap_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let t = Thermogram::from_bytes(1, 3, &[10, 100, 200]).unwrap();
        write_trimap_pgm(&amt_threshold(&t, 50.0, 150.0).unwrap(), &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap().pixels(), &[0.0, 128.0, 255.0]);
    }

    #[test]
    fn png_rgb_is_converted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let file = fs::File::create(&path).unwrap();
        let mut enc = png::Encoder::new(file, 2, 1);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[255, 0, 0, 9, 9, 9]).unwrap();
        let t = read_image(&path).unwrap();
        assert_eq!(t.scale(), Scale::Byte);
        assert_eq!(t.pixels(), &[76.0, 9.0]);
    }
}

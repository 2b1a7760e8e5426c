use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::Spectrogram;

/// Displayed dynamic range below the loudest bin.
pub const DYNAMIC_RANGE_DB: f64 = 80.0;

/// Viridis anchors at 1/8 steps; the 256-entry table interpolates them.
const VIRIDIS_ANCHORS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

fn colormap() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    for (i, entry) in lut.iter_mut().enumerate() {
        let x = i as f64 / 255.0 * 8.0;
        let lo = (x.floor() as usize).min(7);
        let frac = x - lo as f64;
        for c in 0..3 {
            let a = VIRIDIS_ANCHORS[lo][c] as f64;
            let b = VIRIDIS_ANCHORS[lo + 1][c] as f64;
            entry[c] = (a + (b - a) * frac).round() as u8;
        }
    }
    lut
}

/// RGB pixels of one channel: time left to right, low frequencies at the
/// bottom, log magnitude clipped to [`DYNAMIC_RANGE_DB`] below the peak.
pub fn render_spectrogram(spec: &Spectrogram, channel: usize) -> Result<(u32, u32, Vec<u8>)> {
    if channel >= spec.num_channels() {
        return Err(Error::Shape(format!(
            "channel {channel} out of range for {} channels",
            spec.num_channels()
        )));
    }
    let (t_n, f_n) = (spec.num_frames(), spec.num_bins());
    let db: Vec<f64> = spec
        .channel(channel)
        .iter()
        .map(|v| 10.0 * v.norm_sqr().max(1e-20).log10())
        .collect();
    let top = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lut = colormap();
    let mut pixels = Vec::with_capacity(t_n * f_n * 3);
    for row in 0..f_n {
        let f = f_n - 1 - row;
        for t in 0..t_n {
            let level =
                ((db[t * f_n + f] - top + DYNAMIC_RANGE_DB) / DYNAMIC_RANGE_DB).clamp(0.0, 1.0);
            pixels.extend_from_slice(&lut[(level * 255.0).round() as usize]);
        }
    }
    Ok((t_n as u32, f_n as u32, pixels))
}

pub fn write_spectrogram_png(spec: &Spectrogram, channel: usize, path: &Path) -> Result<()> {
    let (w, h, pixels) = render_spectrogram(spec, channel)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut writer = enc.write_header().map_err(encode_err)?;
    writer.write_image_data(&pixels).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

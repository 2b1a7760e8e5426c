//! Spectral and spatial input features: log power spectrum (LPS),
//! inter-channel phase difference (IPD), and directional features (DF).

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{distance, Position, SPEED_OF_SOUND};
use crate::signal::{Spectrogram, StftConfig};
use crate::tensor_file::{read_tensors, write_tensors, Tensor};

pub const LPS_FLOOR: f64 = 1e-12;

/// Wrap a phase into `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Feature planes, each laid out `(plane, frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub frames: usize,
    pub bins: usize,
    /// `(frame, bin)` log power of the reference channel.
    pub lps: Vec<f64>,
    /// `(pair, frame, bin)` wrapped phase differences.
    pub ipd: Vec<f64>,
    /// `(zone, frame, bin)` directional coherence in `[-1, 1]`.
    pub df: Vec<f64>,
    pub num_pairs: usize,
    pub num_zones: usize,
}

impl FeatureTensor {
    /// Feature vector width per time-frequency bin.
    pub fn dim(&self) -> usize {
        1 + self.num_pairs + self.num_zones
    }

    /// All features of bin `(t, f)` in the order `[lps, ipd.., df..]`.
    pub fn at(&self, t: usize, f: usize) -> Vec<f64> {
        let plane = self.frames * self.bins;
        let o = t * self.bins + f;
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.lps[o]);
        v.extend((0..self.num_pairs).map(|p| self.ipd[p * plane + o]));
        v.extend((0..self.num_zones).map(|z| self.df[z * plane + o]));
        v
    }

    /// Dump as three tensor records: lps `[T, F]`, ipd `[P, T, F]`, df `[Z, T, F]`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_tensors(
            path,
            &[
                Tensor::new(vec![self.frames, self.bins], self.lps.clone())?,
                Tensor::new(
                    vec![self.num_pairs, self.frames, self.bins],
                    self.ipd.clone(),
                )?,
                Tensor::new(
                    vec![self.num_zones, self.frames, self.bins],
                    self.df.clone(),
                )?,
            ],
        )
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut ts = read_tensors(path)?;
        if ts.len() != 3 {
            return Err(Error::Shape(format!(
                "feature dump holds {} tensors, expected 3",
                ts.len()
            )));
        }
        let df = ts.pop().unwrap();
        let ipd = ts.pop().unwrap();
        let lps = ts.pop().unwrap();
        let (frames, bins) = match lps.dims.as_slice() {
            [t, f] => (*t, *f),
            d => return Err(Error::Shape(format!("lps dims {d:?}"))),
        };
        if ipd.dims.len() != 3 || ipd.dims[1..] != [frames, bins] {
            return Err(Error::Shape(format!("ipd dims {:?}", ipd.dims)));
        }
        if df.dims.len() != 3 || df.dims[1..] != [frames, bins] {
            return Err(Error::Shape(format!("df dims {:?}", df.dims)));
        }
        Ok(Self {
            frames,
            bins,
            num_pairs: ipd.dims[0],
            num_zones: df.dims[0],
            lps: lps.data,
            ipd: ipd.data,
            df: df.data,
        })
    }
}

/// `ln(max(|Y_ref|^2, 1e-12))` per bin, laid out `(frame, bin)`.
pub fn compute_lps(s: &Spectrogram, ref_ch: usize) -> Result<Vec<f64>> {
    if ref_ch >= s.num_channels() {
        return Err(Error::Shape(format!(
            "reference channel {ref_ch} out of range for {} channels",
            s.num_channels()
        )));
    }
    Ok(s.channel(ref_ch)
        .iter()
        .map(|v| v.norm_sqr().max(LPS_FLOOR).ln())
        .collect())
}

fn check_pairs(s: &Spectrogram, pairs: &[(usize, usize)]) -> Result<()> {
    if s.num_channels() < 2 {
        return Err(Error::Shape("IPD needs at least two channels".into()));
    }
    for &(a, b) in pairs {
        if a >= s.num_channels() || b >= s.num_channels() {
            return Err(Error::Shape(format!(
                "mic pair ({a}, {b}) out of range for {} channels",
                s.num_channels()
            )));
        }
    }
    Ok(())
}

/// `wrap(angle(Y_a) - angle(Y_b))` per pair, laid out `(pair, frame, bin)`.
pub fn compute_ipd(s: &Spectrogram, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    check_pairs(s, pairs)?;
    let mut out = Vec::with_capacity(pairs.len() * s.num_frames() * s.num_bins());
    for &(a, b) in pairs {
        out.extend(
            s.channel(a)
                .iter()
                .zip(s.channel(b))
                .map(|(ya, yb)| wrap_phase(ya.arg() - yb.arg())),
        );
    }
    Ok(out)
}

/// Expected inter-channel phase per zone, pair and bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSteering {
    /// `phases[zone][pair][bin]`
    pub phases: Vec<Vec<Vec<f64>>>,
}

impl ZoneSteering {
    /// Free-field steering phases from known positions: the IPD a point
    /// source at each zone center would produce.
    pub fn from_geometry(
        mics: &[Position],
        zones: &[Position],
        pairs: &[(usize, usize)],
        cfg: &StftConfig,
        sample_rate: u32,
    ) -> Result<Self> {
        for &(a, b) in pairs {
            if a >= mics.len() || b >= mics.len() {
                return Err(Error::Shape(format!("mic pair ({a}, {b}) out of range")));
            }
        }
        let phases = zones
            .iter()
            .map(|z| {
                pairs
                    .iter()
                    .map(|&(a, b)| {
                        let dd = distance(z, &mics[a]) - distance(z, &mics[b]);
                        (0..cfg.num_bins())
                            .map(|f| {
                                let hz = cfg.bin_frequency(f, sample_rate);
                                wrap_phase(-2.0 * PI * hz * dd / SPEED_OF_SOUND)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { phases })
    }

    pub fn num_zones(&self) -> usize {
        self.phases.len()
    }
}

/// `mean_p cos(ipd_p - steer_{zone,p})`, laid out `(zone, frame, bin)`.
pub fn compute_df(
    s: &Spectrogram,
    pairs: &[(usize, usize)],
    steering: &ZoneSteering,
) -> Result<Vec<f64>> {
    let ipd = compute_ipd(s, pairs)?;
    let (frames, bins) = (s.num_frames(), s.num_bins());
    let plane = frames * bins;
    let mut out = Vec::with_capacity(steering.num_zones() * plane);
    for (zone, per_pair) in steering.phases.iter().enumerate() {
        if per_pair.len() != pairs.len() || per_pair.iter().any(|p| p.len() != bins) {
            return Err(Error::Shape(format!(
                "steering for zone {zone} does not cover {} pairs x {bins} bins",
                pairs.len()
            )));
        }
        for t in 0..frames {
            for f in 0..bins {
                let acc: f64 = per_pair
                    .iter()
                    .enumerate()
                    .map(|(p, steer)| (ipd[p * plane + t * bins + f] - steer[f]).cos())
                    .sum();
                out.push((acc / pairs.len().max(1) as f64).clamp(-1.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Every mic pair `(i, j)` with `i < j`.
pub fn all_pairs(num_mics: usize) -> Vec<(usize, usize)> {
    (0..num_mics)
        .flat_map(|i| (i + 1..num_mics).map(move |j| (i, j)))
        .collect()
}

pub fn extract_features(
    mix: &Spectrogram,
    ref_ch: usize,
    pairs: &[(usize, usize)],
    steering: &ZoneSteering,
) -> Result<FeatureTensor> {
    Ok(FeatureTensor {
        frames: mix.num_frames(),
        bins: mix.num_bins(),
        lps: compute_lps(mix, ref_ch)?,
        ipd: compute_ipd(mix, pairs)?,
        df: compute_df(mix, pairs, steering)?,
        num_pairs: pairs.len(),
        num_zones: steering.num_zones(),
    })
}

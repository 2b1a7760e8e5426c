//! Mel-spaced band partition of the spectrum and the per-band linear
//! projections between bins and a fixed-size embedding.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::weights::WeightBundle;

pub const DEFAULT_EMBEDDING: usize = 32;
pub const DEFAULT_BANDS: usize = 64;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Contiguous partition of `bins` frequency bins into `K` bands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandPlan {
    pub edges: Vec<usize>,
    pub bins: usize,
    pub sample_rate: u32,
}

/// Band edges at uniformly spaced mel points.
///
/// Edges that collide at low frequencies are pushed up by one bin, then any
/// that overrun the top are pulled back down, so every band keeps at least
/// one bin.
pub fn make_band_plan(bins: usize, bands: usize, sample_rate: u32) -> Result<BandPlan> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
    }
    if bands == 0 || bands > bins {
        return Err(Error::Config(format!(
            "band count must lie in 1..={bins}, got {bands}"
        )));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let mut edges: Vec<usize> = (0..=bands)
        .map(|i| {
            let hz = mel_to_hz(i as f64 * mel_max / bands as f64);
            (hz * (bins - 1) as f64 / nyquist).round() as usize
        })
        .collect();
    edges[0] = 0;
    edges[bands] = bins;
    for k in 1..bands {
        if edges[k] <= edges[k - 1] {
            edges[k] = edges[k - 1] + 1;
        }
    }
    for k in (1..bands).rev() {
        if edges[k] >= edges[k + 1] {
            edges[k] = edges[k + 1] - 1;
        }
    }
    Ok(BandPlan {
        edges,
        bins,
        sample_rate,
    })
}

impl BandPlan {
    pub fn num_bands(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn width(&self, k: usize) -> usize {
        self.edges[k + 1] - self.edges[k]
    }

    pub fn widths(&self) -> Vec<usize> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn max_width(&self) -> usize {
        self.widths().into_iter().max().unwrap_or(0)
    }

    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.edges[k]..self.edges[k + 1]
    }

    /// Band containing bin `f`.
    pub fn band_of(&self, f: usize) -> usize {
        self.edges.partition_point(|&e| e <= f) - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.len() < 2 {
            return Err(Error::Config("band plan needs at least one band".into()));
        }
        if self.edges[0] != 0 || *self.edges.last().unwrap() != self.bins {
            return Err(Error::Config(format!(
                "band edges must run from 0 to {}, got {:?}",
                self.bins, self.edges
            )));
        }
        if self.edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "band edges must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Text manifest: `bands`, `sample_rate`, `bins` and `edges` lines.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        writeln!(s, "bands {}", self.num_bands()).unwrap();
        writeln!(s, "sample_rate {}", self.sample_rate).unwrap();
        writeln!(s, "bins {}", self.bins).unwrap();
        let edges: Vec<String> = self.edges.iter().map(|e| e.to_string()).collect();
        writeln!(s, "edges {}", edges.join(" ")).unwrap();
        s
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let (mut bands, mut sample_rate, mut bins, mut edges) = (None, None, None, None);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let bad =
                |what: &str| Error::Config(format!("band manifest line {}: bad {what}", n + 1));
            match key {
                "bands" => bands = Some(rest.trim().parse::<usize>().map_err(|_| bad("bands"))?),
                "sample_rate" => {
                    sample_rate = Some(rest.trim().parse::<u32>().map_err(|_| bad("sample_rate"))?)
                }
                "bins" => bins = Some(rest.trim().parse::<usize>().map_err(|_| bad("bins"))?),
                "edges" => {
                    edges = Some(
                        rest.split_whitespace()
                            .map(|e| e.parse::<usize>().map_err(|_| bad("edge")))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                other => {
                    return Err(Error::Config(format!(
                        "band manifest line {}: unknown key `{other}`",
                        n + 1
                    )))
                }
            }
        }
        let missing = |k: &str| Error::Config(format!("band manifest is missing `{k}`"));
        let plan = BandPlan {
            edges: edges.ok_or_else(|| missing("edges"))?,
            bins: bins.ok_or_else(|| missing("bins"))?,
            sample_rate: sample_rate.ok_or_else(|| missing("sample_rate"))?,
        };
        plan.validate()?;
        if bands.ok_or_else(|| missing("bands"))? != plan.num_bands() {
            return Err(Error::Config("band count disagrees with edge list".into()));
        }
        Ok(plan)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_manifest()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_manifest(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Row-major dense real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_na(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

/// One `E x f_k` map per band, applied along frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisFilters {
    pub bands: Vec<Mat>,
    pub embedding: usize,
}

/// One `f_k x E` map per band, applied along the embedding axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisFilters {
    pub bands: Vec<Mat>,
    pub embedding: usize,
}

fn check_band_shapes(
    mats: &[Mat],
    plan: &BandPlan,
    embedding: usize,
    transpose: bool,
) -> Result<()> {
    if mats.len() != plan.num_bands() {
        return Err(Error::Shape(format!(
            "{} filters for {} bands",
            mats.len(),
            plan.num_bands()
        )));
    }
    for (k, m) in mats.iter().enumerate() {
        let (r, c) = if transpose {
            (plan.width(k), embedding)
        } else {
            (embedding, plan.width(k))
        };
        if m.rows != r || m.cols != c {
            return Err(Error::Shape(format!(
                "band {k} filter is {}x{}, expected {r}x{c}",
                m.rows, m.cols
            )));
        }
    }
    Ok(())
}

impl AnalysisFilters {
    /// Seeded random maps with orthonormal rows (or orthonormal columns when
    /// `E` exceeds the band width), from a QR factorization of a Gaussian.
    pub fn orthonormal(plan: &BandPlan, embedding: usize, seed: u64) -> Result<Self> {
        if embedding == 0 {
            return Err(Error::Config("embedding size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bands = plan
            .widths()
            .into_iter()
            .map(|w| {
                let (tall, short) = (w.max(embedding), w.min(embedding));
                let g = DMatrix::from_fn(tall, short, |_, _| StandardNormal.sample(&mut rng));
                let q = g.qr().q();
                if embedding >= w {
                    Mat::from_na(&q)
                } else {
                    Mat::from_na(&q.transpose())
                }
            })
            .collect();
        Ok(Self { bands, embedding })
    }

    /// `E = 1` maps that average each band's bins.
    pub fn averaging(plan: &BandPlan) -> Self {
        let bands = plan
            .widths()
            .into_iter()
            .map(|w| Mat::new(1, w, vec![1.0 / w as f64; w]).unwrap())
            .collect();
        Self {
            bands,
            embedding: 1,
        }
    }

    pub fn zeros(plan: &BandPlan, embedding: usize) -> Self {
        let bands = plan
            .widths()
            .into_iter()
            .map(|w| Mat::zeros(embedding, w))
            .collect();
        Self { bands, embedding }
    }

    pub fn validate(&self, plan: &BandPlan) -> Result<()> {
        check_band_shapes(&self.bands, plan, self.embedding, false)
    }

    pub fn tensor_name(k: usize) -> String {
        format!("subband.analysis.{k}")
    }

    pub fn from_bundle(bundle: &WeightBundle, plan: &BandPlan, embedding: usize) -> Result<Self> {
        let bands = (0..plan.num_bands())
            .map(|k| {
                let data = bundle.expect(&Self::tensor_name(k), &[embedding, plan.width(k)])?;
                Mat::new(embedding, plan.width(k), data.to_vec())
            })
            .collect::<Result<_>>()?;
        Ok(Self { bands, embedding })
    }

    pub fn to_bundle(&self, bundle: &mut WeightBundle) -> Result<()> {
        for (k, m) in self.bands.iter().enumerate() {
            bundle.insert(&Self::tensor_name(k), vec![m.rows, m.cols], m.data.clone())?;
        }
        Ok(())
    }
}

impl SynthesisFilters {
    /// Moore-Penrose pseudo-inverse of every analysis map.
    pub fn pseudo_inverse(analysis: &AnalysisFilters) -> Result<Self> {
        let bands = analysis
            .bands
            .iter()
            .map(|a| {
                let pinv = a
                    .to_na()
                    .pseudo_inverse(1e-12)
                    .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))?;
                Ok(Mat::from_na(&pinv))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            bands,
            embedding: analysis.embedding,
        })
    }

    pub fn zeros(plan: &BandPlan, embedding: usize) -> Self {
        let bands = plan
            .widths()
            .into_iter()
            .map(|w| Mat::zeros(w, embedding))
            .collect();
        Self { bands, embedding }
    }

    pub fn validate(&self, plan: &BandPlan) -> Result<()> {
        check_band_shapes(&self.bands, plan, self.embedding, true)
    }

    pub fn tensor_name(k: usize) -> String {
        format!("subband.synthesis.{k}")
    }

    pub fn from_bundle(bundle: &WeightBundle, plan: &BandPlan, embedding: usize) -> Result<Self> {
        let bands = (0..plan.num_bands())
            .map(|k| {
                let data = bundle.expect(&Self::tensor_name(k), &[plan.width(k), embedding])?;
                Mat::new(plan.width(k), embedding, data.to_vec())
            })
            .collect::<Result<_>>()?;
        Ok(Self { bands, embedding })
    }

    pub fn to_bundle(&self, bundle: &mut WeightBundle) -> Result<()> {
        for (k, m) in self.bands.iter().enumerate() {
            bundle.insert(&Self::tensor_name(k), vec![m.rows, m.cols], m.data.clone())?;
        }
        Ok(())
    }
}

/// Real per-band tensor laid out `(k, t, e, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandTensor {
    pub data: Vec<f64>,
    pub bands: usize,
    pub frames: usize,
    pub embedding: usize,
    pub depth: usize,
}

/// Band-projected covariance features.
pub type SubbandFeature = SubbandTensor;
/// Band-level beamformer weights in paired real form.
pub type SubbandWeights = SubbandTensor;

impl SubbandTensor {
    pub fn zeros(bands: usize, frames: usize, embedding: usize, depth: usize) -> Self {
        Self {
            data: vec![0.0; bands * frames * embedding * depth],
            bands,
            frames,
            embedding,
            depth,
        }
    }

    pub fn band(&self, k: usize) -> &[f64] {
        let n = self.frames * self.embedding * self.depth;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn band_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.frames * self.embedding * self.depth;
        &mut self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn get(&self, k: usize, t: usize, e: usize, d: usize) -> f64 {
        self.data[((k * self.frames + t) * self.embedding + e) * self.depth + d]
    }
}

/// Project one band of a `(t, f, d)` tensor: output `(t, e, d)`.
pub fn analyze_band(
    input: &[f64],
    frames: usize,
    depth: usize,
    plan: &BandPlan,
    filter: &Mat,
    k: usize,
) -> Vec<f64> {
    let range = plan.range(k);
    let e_n = filter.rows;
    let mut out = vec![0.0; frames * e_n * depth];
    for t in 0..frames {
        let row = &input[t * plan.bins * depth..(t + 1) * plan.bins * depth];
        for e in 0..e_n {
            let o = &mut out[(t * e_n + e) * depth..(t * e_n + e + 1) * depth];
            for (j, f) in range.clone().enumerate() {
                let a = filter.at(e, j);
                if a == 0.0 {
                    continue;
                }
                for (ov, x) in o.iter_mut().zip(&row[f * depth..(f + 1) * depth]) {
                    *ov += a * x;
                }
            }
        }
    }
    out
}

/// Map one band of `(t, e, d)` back onto its bins of a `(t, f, d)` tensor.
pub fn synthesize_band(
    band: &[f64],
    frames: usize,
    depth: usize,
    plan: &BandPlan,
    filter: &Mat,
    k: usize,
    out: &mut [f64],
) {
    let e_n = filter.cols;
    for t in 0..frames {
        for (j, f) in plan.range(k).enumerate() {
            let o = &mut out[(t * plan.bins + f) * depth..(t * plan.bins + f + 1) * depth];
            o.iter_mut().for_each(|v| *v = 0.0);
            for e in 0..e_n {
                let s = filter.at(j, e);
                if s == 0.0 {
                    continue;
                }
                let src = &band[(t * e_n + e) * depth..(t * e_n + e + 1) * depth];
                for (ov, x) in o.iter_mut().zip(src) {
                    *ov += s * x;
                }
            }
        }
    }
}

/// Synthesis of one band's `(t, e, d)` block into a compact `(t, f_k, d)` block.
pub fn synthesize_band_compact(
    band: &[f64],
    frames: usize,
    depth: usize,
    plan: &BandPlan,
    synthesis: &Mat,
    k: usize,
) -> Vec<f64> {
    let (w, e_n) = (plan.width(k), synthesis.cols);
    let mut out = vec![0.0; frames * w * depth];
    for t in 0..frames {
        for j in 0..w {
            let o = &mut out[(t * w + j) * depth..(t * w + j + 1) * depth];
            for e in 0..e_n {
                let s = synthesis.at(j, e);
                if s == 0.0 {
                    continue;
                }
                let src = &band[(t * e_n + e) * depth..(t * e_n + e + 1) * depth];
                for (ov, x) in o.iter_mut().zip(src) {
                    *ov += s * x;
                }
            }
        }
    }
    out
}

/// Analysis followed by synthesis for one band, as a compact `(t, f_k, d)` block.
pub fn round_trip_band(
    input: &[f64],
    frames: usize,
    depth: usize,
    plan: &BandPlan,
    analysis: &Mat,
    synthesis: &Mat,
    k: usize,
) -> Vec<f64> {
    let emb = analyze_band(input, frames, depth, plan, analysis, k);
    synthesize_band_compact(&emb, frames, depth, plan, synthesis, k)
}

/// Write compact per-band blocks back into a full `(t, f, d)` tensor.
pub fn scatter_bands(
    blocks: &[Vec<f64>],
    frames: usize,
    depth: usize,
    plan: &BandPlan,
) -> Vec<f64> {
    let mut out = vec![0.0; frames * plan.bins * depth];
    for (k, block) in blocks.iter().enumerate() {
        let w = plan.width(k);
        for t in 0..frames {
            let dst = (t * plan.bins + plan.edges[k]) * depth;
            out[dst..dst + w * depth].copy_from_slice(&block[t * w * depth..(t + 1) * w * depth]);
        }
    }
    out
}

/// Band-parallel `synthesize(analyze(x))` without keeping the embeddings.
pub fn round_trip(
    input: &[f64],
    frames: usize,
    depth: usize,
    plan: &BandPlan,
    analysis: &AnalysisFilters,
    synthesis: &SynthesisFilters,
) -> Result<Vec<f64>> {
    analysis.validate(plan)?;
    synthesis.validate(plan)?;
    if analysis.embedding != synthesis.embedding {
        return Err(Error::Shape(
            "analysis and synthesis embeddings differ".into(),
        ));
    }
    if input.len() != frames * plan.bins * depth {
        return Err(Error::Shape(format!(
            "input has {} values, expected {frames} x {} x {depth}",
            input.len(),
            plan.bins
        )));
    }
    let blocks: Vec<Vec<f64>> = (0..plan.num_bands())
        .into_par_iter()
        .map(|k| {
            round_trip_band(
                input,
                frames,
                depth,
                plan,
                &analysis.bands[k],
                &synthesis.bands[k],
                k,
            )
        })
        .collect();
    Ok(scatter_bands(&blocks, frames, depth, plan))
}

/// Project a `(t, f, d)` real tensor onto every band's embedding.
pub fn analyze(
    input: &[f64],
    frames: usize,
    depth: usize,
    plan: &BandPlan,
    filters: &AnalysisFilters,
) -> Result<SubbandFeature> {
    filters.validate(plan)?;
    if input.len() != frames * plan.bins * depth {
        return Err(Error::Shape(format!(
            "input has {} values, expected {frames} x {} x {depth}",
            input.len(),
            plan.bins
        )));
    }
    let bands: Vec<Vec<f64>> = (0..plan.num_bands())
        .into_par_iter()
        .map(|k| analyze_band(input, frames, depth, plan, &filters.bands[k], k))
        .collect();
    Ok(SubbandTensor {
        data: bands.concat(),
        bands: plan.num_bands(),
        frames,
        embedding: filters.embedding,
        depth,
    })
}

/// Map per-band tensors back to a full-band `(t, f, d)` tensor.
pub fn synthesize(
    sub: &SubbandTensor,
    plan: &BandPlan,
    filters: &SynthesisFilters,
) -> Result<Vec<f64>> {
    filters.validate(plan)?;
    if sub.bands != plan.num_bands() || sub.embedding != filters.embedding {
        return Err(Error::Shape(format!(
            "subband tensor has {} bands x {} embedding, filters expect {} x {}",
            sub.bands,
            sub.embedding,
            plan.num_bands(),
            filters.embedding
        )));
    }
    let total: usize = plan.widths().iter().sum();
    if total != plan.bins {
        return Err(Error::Shape(format!(
            "bands cover {total} bins, expected {}",
            plan.bins
        )));
    }
    let (frames, depth) = (sub.frames, sub.depth);
    let parts: Vec<Vec<f64>> = (0..plan.num_bands())
        .into_par_iter()
        .map(|k| {
            let mut full = vec![0.0; frames * plan.bins * depth];
            synthesize_band(
                sub.band(k),
                frames,
                depth,
                plan,
                &filters.bands[k],
                k,
                &mut full,
            );
            full
        })
        .collect();
    // each band writes only its own bins, so merging is a disjoint copy
    let mut out = vec![0.0; frames * plan.bins * depth];
    for (k, part) in parts.iter().enumerate() {
        for t in 0..frames {
            let lo = (t * plan.bins + plan.edges[k]) * depth;
            let hi = (t * plan.bins + plan.edges[k + 1]) * depth;
            out[lo..hi].copy_from_slice(&part[lo..hi]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    fn ramp(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| ((i * 7919) % 1009) as f64 / 1009.0 - 0.5)
            .collect()
    }

    #[test]
    fn degenerate_plans() {
        assert_eq!(make_band_plan(257, 1, 16000).unwrap().edges, vec![0, 257]);
        let full = make_band_plan(257, 257, 16000).unwrap();
        assert!(full.widths().iter().all(|&w| w == 1));
        assert!(make_band_plan(257, 258, 16000).is_err());
        assert!(make_band_plan(257, 0, 16000).is_err());
    }

    #[test]
    fn eight_band_plan() {
        let p = make_band_plan(257, 8, 16000).unwrap();
        assert_eq!(p.edges, vec![0, 8, 20, 35, 57, 86, 126, 181, 257]);
        assert!(p.width(7) >= 4 * p.width(0));
        assert_eq!(p.band_of(0), 0);
        assert_eq!(p.band_of(7), 0);
        assert_eq!(p.band_of(8), 1);
        assert_eq!(p.band_of(256), 7);
    }

    #[test]
    fn manifest_round_trip() {
        let p = make_band_plan(257, 16, 16000).unwrap();
        let text = p.to_manifest();
        assert!(text.starts_with("bands 16\n"));
        assert_eq!(BandPlan::from_manifest(&text).unwrap(), p);
        assert!(BandPlan::from_manifest("bands 1\nbins 4\nsample_rate 8\nedges 0 5\n").is_err());
        assert!(BandPlan::from_manifest("bands 1\nbins 4\n").is_err());
        assert!(BandPlan::from_manifest("colour blue\n").is_err());
    }

    #[test]
    fn passthrough_and_zero() {
        let plan = make_band_plan(9, 9, 16000).unwrap();
        let ident = AnalysisFilters {
            bands: vec![Mat::new(1, 1, vec![1.0]).unwrap(); 9],
            embedding: 1,
        };
        let x = ramp(4 * 9 * 3);
        let sub = analyze(&x, 4, 3, &plan, &ident).unwrap();
        assert_eq!(sub.data.len(), x.len());
        for t in 0..4 {
            for f in 0..9 {
                for d in 0..3 {
                    assert_eq!(sub.get(f, t, 0, d), x[(t * 9 + f) * 3 + d]);
                }
            }
        }
        let synth = SynthesisFilters {
            bands: ident.bands.clone(),
            embedding: 1,
        };
        assert_eq!(synthesize(&sub, &plan, &synth).unwrap(), x);

        let zero = analyze(&x, 4, 3, &plan, &AnalysisFilters::zeros(&plan, 2)).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));
        let back = synthesize(&SubbandTensor::zeros(9, 4, 1, 3), &plan, &synth).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn averaging_filter_gives_band_mean() {
        let plan = make_band_plan(257, 8, 16000).unwrap();
        let x = ramp(3 * 257 * 2);
        let sub = analyze(&x, 3, 2, &plan, &AnalysisFilters::averaging(&plan)).unwrap();
        for k in 0..8 {
            for t in 0..3 {
                for d in 0..2 {
                    let mean = plan.range(k).map(|f| x[(t * 257 + f) * 2 + d]).sum::<f64>()
                        / plan.width(k) as f64;
                    assert!((sub.get(k, t, 0, d) - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pseudo_inverse_round_trip() {
        for k in [8, 16, 32, 64] {
            let plan = make_band_plan(257, k, 16000).unwrap();
            let ana = AnalysisFilters::orthonormal(&plan, 128, 3).unwrap();
            let syn = SynthesisFilters::pseudo_inverse(&ana).unwrap();
            let x = ramp(5 * 257 * 4);
            let back = synthesize(&analyze(&x, 5, 4, &plan, &ana).unwrap(), &plan, &syn).unwrap();
            assert!(rel_err(&back, &x) < 1e-10, "K={k}");
            assert_eq!(round_trip(&x, 5, 4, &plan, &ana, &syn).unwrap(), back);
        }
    }

    #[test]
    fn orthonormal_rows_when_band_is_wide() {
        let plan = make_band_plan(257, 8, 16000).unwrap();
        let ana = AnalysisFilters::orthonormal(&plan, 4, 1).unwrap();
        let a = &ana.bands[7];
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = (0..a.cols).map(|c| a.at(i, c) * a.at(j, c)).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impulse_stays_in_band() {
        let plan = make_band_plan(257, 16, 16000).unwrap();
        let ana = AnalysisFilters::orthonormal(&plan, 8, 2).unwrap();
        let syn = SynthesisFilters::pseudo_inverse(&ana).unwrap();
        let mut x = vec![0.0; 257];
        x[100] = 1.0;
        let sub = analyze(&x, 1, 1, &plan, &ana).unwrap();
        let k = plan.band_of(100);
        for b in (0..16).filter(|&b| b != k) {
            assert!(sub.band(b).iter().all(|&v| v == 0.0));
        }
        let back = synthesize(&sub, &plan, &syn).unwrap();
        for (f, v) in back.iter().enumerate() {
            if !plan.range(k).contains(&f) {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn bundle_round_trip_and_shape_errors() {
        let plan = make_band_plan(257, 8, 16000).unwrap();
        let ana = AnalysisFilters::orthonormal(&plan, 16, 4).unwrap();
        let syn = SynthesisFilters::pseudo_inverse(&ana).unwrap();
        let mut b = WeightBundle::new();
        ana.to_bundle(&mut b).unwrap();
        syn.to_bundle(&mut b).unwrap();
        assert_eq!(AnalysisFilters::from_bundle(&b, &plan, 16).unwrap(), ana);
        assert_eq!(SynthesisFilters::from_bundle(&b, &plan, 16).unwrap(), syn);
        assert!(AnalysisFilters::from_bundle(&b, &plan, 8).is_err());
        let other = make_band_plan(257, 16, 16000).unwrap();
        assert!(analyze(&ramp(257), 1, 1, &other, &ana).is_err());
        assert!(analyze(&ramp(256), 1, 1, &plan, &ana).is_err());
    }
}

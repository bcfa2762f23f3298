//! Closure measurement: layer embeddings of stimulus images, the
//! per-triple score C = s(a,c) - s(d,c) under cosine similarity, and
//! its aggregation into per-edge-length curves with uncertainty.

use crate::data::Normalizer;
use crate::nn::{Network, Scalar, Tensor};
use crate::rng::{self, STREAM_BOOTSTRAP};
use crate::stimulus::{enumerate_specs, Image, StimulusSpec, Triple};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Curves with every |mean C| below this count as flat.
pub const FLATNESS_TAU: f64 = 0.1;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ZeroNorm {
    Neither,
    /// Exactly one argument had zero norm; similarity is reported as 0
    /// but the pair deserves attention (a dead representation).
    One,
    /// Both zero; defined as similarity 0.
    Both,
}

/// Cosine of the angle between two vectors, accumulated in f64.
pub fn cosine(x: &[f32], y: &[f32]) -> Result<(f64, ZeroNorm)> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut nx = 0.0f64;
    let mut ny = 0.0f64;
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    match (nx == 0.0, ny == 0.0) {
        (true, true) => Ok((0.0, ZeroNorm::Both)),
        (false, false) => Ok((dot / (nx.sqrt() * ny.sqrt()), ZeroNorm::Neither)),
        _ => Ok((0.0, ZeroNorm::One)),
    }
}

/// Embeddings of a set of images at one layer, keyed by caller-chosen
/// ids (canonical spec indices for stimulus work).
pub struct EmbeddingMatrix {
    pub layer: String,
    pub dim: usize,
    /// All entries >= 0 (always true for post-ReLU layers).
    pub non_negative: bool,
    index_of: HashMap<usize, usize>,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn from_rows(layer: &str, ids: &[usize], rows: Vec<Vec<f32>>) -> Result<Self> {
        if ids.len() != rows.len() || rows.is_empty() {
            return Err(Error::Shape(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                rows.len()
            )));
        }
        let dim = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut non_negative = true;
        for row in &rows {
            if row.len() != dim {
                return Err(Error::Shape(format!(
                    "embedding rows of mixed widths {dim} and {}",
                    row.len()
                )));
            }
            non_negative &= row.iter().all(|v| *v >= 0.0);
            data.extend_from_slice(row);
        }
        let index_of = ids.iter().enumerate().map(|(row, &id)| (id, row)).collect();
        Ok(EmbeddingMatrix { layer: layer.to_string(), dim, non_negative, index_of, data })
    }

    pub fn len(&self) -> usize {
        self.index_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_of.is_empty()
    }

    pub fn vector(&self, id: usize) -> Option<&[f32]> {
        let row = *self.index_of.get(&id)?;
        Some(&self.data[row * self.dim..(row + 1) * self.dim])
    }
}

/// Runs the network over `images[id]` for each id and records the named
/// layer's activations, preprocessed with the model's stored
/// normalizer. Rows come back keyed by the same ids.
pub fn embed_stimuli<S: Scalar>(
    net: &Network<S>,
    norm: &Normalizer,
    images: &[Image],
    ids: &[usize],
    layer: &str,
    batch_size: usize,
) -> Result<EmbeddingMatrix> {
    if ids.is_empty() {
        return Err(Error::Dataset("no images to embed".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    for &id in ids {
        if id >= images.len() {
            return Err(Error::Dataset(format!(
                "embedding id {id} outside image set of {}",
                images.len()
            )));
        }
    }
    let img0 = &images[ids[0]];
    let (h, w, c) = (img0.height, img0.width, img0.channels);
    let mut dim = 0usize;
    let mut data: Vec<f32> = Vec::new();
    let mut non_negative = true;
    let mut scratch = vec![0.0f32; h * w * c];
    for chunk in ids.chunks(batch_size) {
        let mut batch = Tensor::<S>::zeros(vec![chunk.len(), h, w, c]);
        for (slot, &id) in chunk.iter().enumerate() {
            let img = &images[id];
            norm.apply_into(&img.values, img.channels, &mut scratch);
            let dst = &mut batch.data_mut()[slot * h * w * c..(slot + 1) * h * w * c];
            for (d, &v) in dst.iter_mut().zip(scratch.iter()) {
                *d = S::from_f64(v as f64);
            }
        }
        let (_, mut recorded) = net.forward(&batch, &[layer])?;
        let (_, acts) = recorded.pop().expect("requested layer was recorded");
        let per = acts.numel() / chunk.len();
        if dim == 0 {
            dim = per;
            data.reserve(ids.len() * dim);
        }
        for &v in acts.data() {
            let f = Scalar::to_f64(v) as f32;
            non_negative &= f >= 0.0;
            data.push(f);
        }
    }
    let index_of = ids.iter().enumerate().map(|(row, &id)| (id, row)).collect();
    Ok(EmbeddingMatrix { layer: layer.to_string(), dim, non_negative, index_of, data })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureRecord {
    pub model_id: String,
    pub layer: String,
    pub triple_index: usize,
    pub edge_length: u8,
    pub s_ac: f64,
    pub s_dc: f64,
    pub c: f64,
}

impl ClosureRecord {
    /// C lies in [-2,+2] mathematically; values outside [-1,+1] only
    /// arise when some similarity is negative (non-ReLU layers).
    pub fn outside_unit_range(&self) -> bool {
        self.c.abs() > 1.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClosureDiagnostics {
    /// Triple indices where exactly one vector of a pair had zero norm.
    pub one_zero_norm: Vec<usize>,
    /// Triple indices where both vectors of a pair had zero norm.
    pub both_zero_norm: Vec<usize>,
    /// Triple indices with C outside [-1,+1].
    pub outside_unit_range: Vec<usize>,
}

fn spec_id(by_spec: &HashMap<StimulusSpec, usize>, spec: &StimulusSpec) -> Result<usize> {
    by_spec
        .get(spec)
        .copied()
        .ok_or_else(|| Error::Dataset(format!("no canonical index for spec {spec:?}")))
}

/// One record per triple: s_ac, s_dc and their difference C, looked up
/// by canonical spec index in the embedding matrix.
pub fn closure_per_triple(
    embeddings: &EmbeddingMatrix,
    triples: &[Triple],
    model_id: &str,
) -> Result<(Vec<ClosureRecord>, ClosureDiagnostics)> {
    let by_spec: HashMap<StimulusSpec, usize> =
        enumerate_specs().into_iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut records = Vec::with_capacity(triples.len());
    let mut diag = ClosureDiagnostics::default();
    for triple in triples {
        let fetch = |spec: &StimulusSpec| -> Result<&[f32]> {
            let id = spec_id(&by_spec, spec)?;
            embeddings.vector(id).ok_or_else(|| {
                Error::Dataset(format!("missing embedding for spec index {id} ({spec:?})"))
            })
        };
        let (fa, fc, fd) = (fetch(&triple.aligned)?, fetch(&triple.complete)?, fetch(&triple.disordered)?);
        let (s_ac, za) = cosine(fa, fc)?;
        let (s_dc, zd) = cosine(fd, fc)?;
        for z in [za, zd] {
            match z {
                ZeroNorm::One => diag.one_zero_norm.push(triple.index),
                ZeroNorm::Both => diag.both_zero_norm.push(triple.index),
                ZeroNorm::Neither => {}
            }
        }
        if embeddings.non_negative {
            assert!(
                s_ac >= 0.0 && s_dc >= 0.0,
                "non-negative embeddings must give non-negative similarities"
            );
        }
        let c = s_ac - s_dc;
        if c.abs() > 1.0 {
            diag.outside_unit_range.push(triple.index);
        }
        records.push(ClosureRecord {
            model_id: model_id.to_string(),
            layer: embeddings.layer.clone(),
            triple_index: triple.index,
            edge_length: triple.edge_length,
            s_ac,
            s_dc,
            c,
        });
    }
    diag.one_zero_norm.dedup();
    diag.both_zero_norm.dedup();
    Ok((records, diag))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CiMethod {
    /// Percentile bootstrap over triples within each edge-length group.
    Bootstrap { b: usize, seed: u64 },
    /// Two-sided 95% Student-t interval on the group mean.
    TInterval,
}

impl Default for CiMethod {
    fn default() -> Self {
        CiMethod::Bootstrap { b: 1000, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub edge_length: u8,
    pub mean_c: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
    /// False when n < 2 left the interval undefined (lo/hi = mean).
    pub ci_defined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureCurve {
    pub model_id: String,
    pub layer: String,
    /// Sorted by edge length, one point per length present in the records.
    pub points: Vec<CurvePoint>,
}

impl ClosureCurve {
    /// The stimulus set defines exactly six edge lengths; a curve over
    /// real stimuli must cover all of them.
    pub fn covers_all_edge_lengths(&self) -> bool {
        let lengths: Vec<u8> = self.points.iter().map(|p| p.edge_length).collect();
        lengths == crate::stimulus::EDGE_LENGTHS
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_c).collect()
    }

    /// Any |mean C| beyond the cosine-difference range claimed for
    /// non-negative embeddings.
    pub fn out_of_range(&self) -> bool {
        self.points.iter().any(|p| p.mean_c.abs() > 1.0)
    }
}

fn percentile_bounds(sorted_means: &[f64]) -> (f64, f64) {
    let b = sorted_means.len();
    let lo = sorted_means[((0.025 * b as f64).floor() as usize).min(b - 1)];
    let hi = sorted_means[((0.975 * b as f64).ceil() as usize - 1).min(b - 1)];
    (lo, hi)
}

/// Groups records by edge length and reduces each group to a mean with
/// a 95% interval. Bootstrap draws are keyed by (seed, edge length) on
/// the group's sorted values, so record order never matters.
pub fn closure_curve(records: &[ClosureRecord], ci: CiMethod) -> Result<ClosureCurve> {
    if records.is_empty() {
        return Err(Error::Dataset("closure curve of zero records".into()));
    }
    let model_id = &records[0].model_id;
    let layer = &records[0].layer;
    for r in records {
        if r.model_id != *model_id || r.layer != *layer {
            return Err(Error::Dataset(format!(
                "mixed curve input: ({},{}) and ({},{})",
                model_id, layer, r.model_id, r.layer
            )));
        }
    }
    let mut groups: std::collections::BTreeMap<u8, Vec<f64>> = Default::default();
    for r in records {
        groups.entry(r.edge_length).or_default().push(r.c);
    }
    let mut points = Vec::with_capacity(groups.len());
    for (edge_length, mut cs) in groups {
        cs.sort_by(f64::total_cmp);
        let n = cs.len();
        let mean = cs.iter().sum::<f64>() / n as f64;
        let (ci_lo, ci_hi, ci_defined) = if n < 2 {
            (mean, mean, false)
        } else {
            match ci {
                CiMethod::Bootstrap { b, seed } => {
                    if b < 2 {
                        return Err(Error::Config(format!("bootstrap needs B >= 2, got {b}")));
                    }
                    let mut rng = rng::keyed(seed, &[STREAM_BOOTSTRAP, edge_length as u64]);
                    let mut means = Vec::with_capacity(b);
                    for _ in 0..b {
                        let mut s = 0.0;
                        for _ in 0..n {
                            s += cs[rng.gen_range(0..n)];
                        }
                        means.push(s / n as f64);
                    }
                    means.sort_by(f64::total_cmp);
                    let (lo, hi) = percentile_bounds(&means);
                    (lo, hi, true)
                }
                CiMethod::TInterval => {
                    let (_, lo, hi) = crate::stats::mean_t_interval95(&cs)?;
                    (lo, hi, true)
                }
            }
        };
        points.push(CurvePoint { edge_length, mean_c: mean, ci_lo, ci_hi, n, ci_defined });
    }
    Ok(ClosureCurve { model_id: model_id.clone(), layer: layer.clone(), points })
}

/// Strict monotone increase of mean C across the curve, shallow to deep
/// edge lengths: the closure signature.
pub fn strictly_increasing(curve: &ClosureCurve) -> bool {
    curve.points.len() >= 2 && curve.points.windows(2).all(|w| w[0].mean_c < w[1].mean_c)
}

/// Every |mean C| below tau: the no-closure signature.
pub fn is_flat(curve: &ClosureCurve, tau: f64) -> bool {
    curve.points.iter().all(|p| p.mean_c.abs() < tau)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeCi {
    pub slope: f64,
    pub lo: f64,
    pub hi: f64,
    pub b: usize,
}

impl SlopeCi {
    pub fn excludes_zero(&self) -> bool {
        self.lo > 0.0 || self.hi < 0.0
    }
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len();
    let xbar = xs.iter().sum::<f64>() / n as f64;
    let ybar = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("slope over a single edge length".into()));
    }
    Ok(sxy / sxx)
}

// keeps slope resamples on a stream distinct from the per-edge curve
// draws (edge lengths are < 0x100)
const SLOPE_TAG: u64 = 0x510;

/// Slope of mean C against edge length with a percentile-bootstrap 95%
/// interval: each draw resamples records within every edge-length group
/// and refits the slope through the resampled group means.
pub fn slope_bootstrap_ci(records: &[ClosureRecord], b: usize, seed: u64) -> Result<SlopeCi> {
    if b < 2 {
        return Err(Error::Config(format!("bootstrap needs B >= 2, got {b}")));
    }
    let mut groups: std::collections::BTreeMap<u8, Vec<f64>> = Default::default();
    for r in records {
        groups.entry(r.edge_length).or_default().push(r.c);
    }
    if groups.len() < 2 {
        return Err(Error::Degenerate(format!(
            "slope needs >= 2 edge lengths, got {}",
            groups.len()
        )));
    }
    for cs in groups.values_mut() {
        cs.sort_by(f64::total_cmp);
    }
    let xs: Vec<f64> = groups.keys().map(|e| *e as f64).collect();
    let ys: Vec<f64> = groups.values().map(|cs| cs.iter().sum::<f64>() / cs.len() as f64).collect();
    let slope = ols_slope(&xs, &ys)?;
    let mut rng = rng::keyed(seed, &[STREAM_BOOTSTRAP, SLOPE_TAG]);
    let mut slopes = Vec::with_capacity(b);
    let mut means = vec![0.0f64; xs.len()];
    for _ in 0..b {
        for (mi, cs) in groups.values().enumerate() {
            let n = cs.len();
            let mut s = 0.0;
            for _ in 0..n {
                s += cs[rng.gen_range(0..n)];
            }
            means[mi] = s / n as f64;
        }
        slopes.push(ols_slope(&xs, &means)?);
    }
    slopes.sort_by(f64::total_cmp);
    let (lo, hi) = percentile_bounds(&slopes);
    Ok(SlopeCi { slope, lo, hi, b })
}

/// Ordinary least-squares slope of mean C against edge length.
pub fn curve_slope(curve: &ClosureCurve) -> Result<f64> {
    let n = curve.points.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("slope needs >= 2 curve points, got {n}")));
    }
    let xs: Vec<f64> = curve.points.iter().map(|p| p.edge_length as f64).collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.mean_c).collect();
    ols_slope(&xs, &ys)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::FileFormat { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write_records(path: &Path, records: &[ClosureRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(csv_err(path))?;
    wtr.write_record(["model_id", "layer", "triple_index", "edge_length", "s_ac", "s_dc", "C"])
        .map_err(csv_err(path))?;
    for r in records {
        wtr.write_record([
            r.model_id.as_str(),
            r.layer.as_str(),
            &r.triple_index.to_string(),
            &r.edge_length.to_string(),
            &format!("{}", r.s_ac),
            &format!("{}", r.s_dc),
            &format!("{}", r.c),
        ])
        .map_err(csv_err(path))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<ClosureRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let get = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::FileFormat {
                path: path.to_path_buf(),
                message: format!("record row needs 7 fields, got {}", rec.len()),
            })
        };
        let num = |i: usize| -> Result<f64> {
            get(i)?.parse().map_err(|e| Error::FileFormat {
                path: path.to_path_buf(),
                message: format!("field {i}: {e}"),
            })
        };
        let int = |i: usize| -> Result<usize> {
            get(i)?.parse().map_err(|e| Error::FileFormat {
                path: path.to_path_buf(),
                message: format!("field {i}: {e}"),
            })
        };
        out.push(ClosureRecord {
            model_id: get(0)?.to_string(),
            layer: get(1)?.to_string(),
            triple_index: int(2)?,
            edge_length: int(3)? as u8,
            s_ac: num(4)?,
            s_dc: num(5)?,
            c: num(6)?,
        });
    }
    Ok(out)
}

pub fn write_curves(path: &Path, curves: &[ClosureCurve]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(csv_err(path))?;
    wtr.write_record(["model_id", "layer", "edge_length", "mean_C", "ci_lo", "ci_hi", "n"])
        .map_err(csv_err(path))?;
    for curve in curves {
        for p in &curve.points {
            let (lo, hi) = if p.ci_defined {
                (format!("{}", p.ci_lo), format!("{}", p.ci_hi))
            } else {
                (String::new(), String::new())
            };
            wtr.write_record([
                curve.model_id.as_str(),
                curve.layer.as_str(),
                &p.edge_length.to_string(),
                &format!("{}", p.mean_c),
                &lo,
                &hi,
                &p.n.to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curves(path: &Path) -> Result<Vec<ClosureCurve>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut curves: Vec<ClosureCurve> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let get = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::FileFormat {
                path: path.to_path_buf(),
                message: format!("curve row needs 7 fields, got {}", rec.len()),
            })
        };
        let num = |i: usize| -> Result<f64> {
            get(i)?.parse().map_err(|e| Error::FileFormat {
                path: path.to_path_buf(),
                message: format!("field {i}: {e}"),
            })
        };
        let (model_id, layer) = (get(0)?.to_string(), get(1)?.to_string());
        let mean_c = num(3)?;
        let ci_defined = !get(4)?.is_empty();
        let point = CurvePoint {
            edge_length: get(2)?.parse().map_err(|e| Error::FileFormat {
                path: path.to_path_buf(),
                message: format!("field 2: {e}"),
            })?,
            mean_c,
            ci_lo: if ci_defined { num(4)? } else { mean_c },
            ci_hi: if ci_defined { num(5)? } else { mean_c },
            n: get(6)?.parse().map_err(|e| Error::FileFormat {
                path: path.to_path_buf(),
                message: format!("field 6: {e}"),
            })?,
            ci_defined,
        };
        match curves.last_mut() {
            Some(c) if c.model_id == model_id && c.layer == layer => c.points.push(point),
            _ => curves.push(ClosureCurve { model_id, layer, points: vec![point] }),
        }
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(edge: u8, c: f64) -> ClosureRecord {
        ClosureRecord {
            model_id: "m".into(),
            layer: "fc_finale".into(),
            triple_index: 0,
            edge_length: edge,
            s_ac: c,
            s_dc: 0.0,
            c,
        }
    }

    #[test]
    fn cosine_identity_orthogonality_and_zero_rules() {
        let v = [1.0f32, 2.0, -3.0];
        let (s, z) = cosine(&v, &v).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(z, ZeroNorm::Neither);
        let (s, _) = cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(s, 0.0);
        let (s, z) = cosine(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!((s, z), (0.0, ZeroNorm::Both));
        let (s, z) = cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!((s, z), (0.0, ZeroNorm::One));
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn curve_flags_single_record_groups() {
        let curve = closure_curve(&[rec(3, 0.5)], CiMethod::default()).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert!(!curve.points[0].ci_defined);
        assert_eq!(curve.points[0].ci_lo, 0.5);
    }

    #[test]
    fn signatures() {
        let up = closure_curve(
            &[rec(3, 0.1), rec(8, 0.2), rec(13, 0.3)],
            CiMethod::TInterval,
        )
        .unwrap();
        assert!(strictly_increasing(&up));
        assert!(!is_flat(&up, 0.1));
        let flat = closure_curve(
            &[rec(3, 0.01), rec(8, -0.02), rec(13, 0.0)],
            CiMethod::TInterval,
        )
        .unwrap();
        assert!(!strictly_increasing(&flat));
        assert!(is_flat(&flat, FLATNESS_TAU));
    }

    #[test]
    fn slope_matches_hand_fit() {
        let mut records = Vec::new();
        for &e in &crate::stimulus::EDGE_LENGTHS {
            records.push(rec(e, 0.01 * e as f64 + 0.05));
        }
        let curve = closure_curve(&records, CiMethod::default()).unwrap();
        assert!(curve.covers_all_edge_lengths());
        assert!((curve_slope(&curve).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn mixed_model_ids_are_rejected() {
        let mut a = rec(3, 0.1);
        a.model_id = "other".into();
        assert!(closure_curve(&[rec(3, 0.0), a], CiMethod::default()).is_err());
    }
}

//! Triangle-fragment probe stimuli: enumeration of the 992 factor
//! combinations, anti-aliased rendering, matched-triple assignment,
//! and on-disk export.

use crate::rng::{self, STREAM_TRIPLES};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const IMG_SIZE: usize = 150;
pub const CHANNELS: usize = 3;
/// Euclidean distance between triangle vertices, in pixels.
pub const VERTEX_DISTANCE: f64 = 116.0;
pub const THETA_GLOBALS: [u16; 8] = [0, 15, 30, 45, 60, 75, 90, 105];
pub const EDGE_LENGTHS: [u8; 6] = [3, 8, 13, 18, 24, 29];
pub const THETA_LOCALS: [u16; 4] = [72, 144, 216, 288];
pub const DEFAULT_STROKE_WIDTH: f64 = 4.0;
const OFFSET_PX: f64 = -8.0;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Complete,
    Aligned,
    Disordered,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Complete => "complete",
            Condition::Aligned => "aligned",
            Condition::Disordered => "disordered",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Black,
    White,
}

impl Background {
    pub fn as_str(self) -> &'static str {
        match self {
            Background::Black => "black",
            Background::White => "white",
        }
    }

    /// (background value, foreground value)
    pub fn values(self) -> (f32, f32) {
        match self {
            Background::Black => (-1.0, 1.0),
            Background::White => (1.0, -1.0),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Centered,
    Offset,
}

impl Position {
    pub fn as_str(self) -> &'static str {
        match self {
            Position::Centered => "centered",
            Position::Offset => "offset",
        }
    }

    pub fn centroid(self) -> [f64; 2] {
        let c = IMG_SIZE as f64 / 2.0;
        match self {
            Position::Centered => [c, c],
            Position::Offset => [c + OFFSET_PX, c + OFFSET_PX],
        }
    }
}

/// One of the 992 probe images, identified by its factor levels.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct StimulusSpec {
    pub condition: Condition,
    pub background: Background,
    pub position: Position,
    pub theta_global: u16,
    pub edge_length: Option<u8>,
    pub theta_local: Option<u16>,
}

impl StimulusSpec {
    pub fn validate(&self) -> Result<()> {
        if !THETA_GLOBALS.contains(&self.theta_global) {
            return Err(Error::InvalidSpec(format!("theta_global {}", self.theta_global)));
        }
        if let Some(e) = self.edge_length {
            if !EDGE_LENGTHS.contains(&e) {
                return Err(Error::InvalidSpec(format!("edge_length {e}")));
            }
        }
        if let Some(l) = self.theta_local {
            if !THETA_LOCALS.contains(&l) {
                return Err(Error::InvalidSpec(format!("theta_local {l}")));
            }
        }
        let ok = match self.condition {
            Condition::Complete => self.edge_length.is_none() && self.theta_local.is_none(),
            Condition::Aligned => self.edge_length.is_some() && self.theta_local.is_none(),
            Condition::Disordered => self.edge_length.is_some() && self.theta_local.is_some(),
        };
        if !ok {
            return Err(Error::InvalidSpec(format!(
                "{} spec carries edge_length={:?}, theta_local={:?}",
                self.condition.as_str(),
                self.edge_length,
                self.theta_local
            )));
        }
        Ok(())
    }

    pub fn filename(&self, index: usize, ext: &str) -> String {
        let mut name = format!(
            "{index:04}_{}_{}_{}_g{:03}",
            self.condition.as_str(),
            self.background.as_str(),
            self.position.as_str(),
            self.theta_global
        );
        if let Some(e) = self.edge_length {
            name.push_str(&format!("_e{e:02}"));
        }
        if let Some(l) = self.theta_local {
            name.push_str(&format!("_l{l:03}"));
        }
        format!("{name}.{ext}")
    }
}

/// H x W x C row-major values in [-1, +1].
#[derive(Clone, PartialEq, Debug)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl Image {
    pub fn fill(height: usize, width: usize, channels: usize, v: f32) -> Self {
        Image { height, width, channels, values: vec![v; height * width * channels] }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.values[(y * self.width + x) * self.channels + c] = v;
    }
}

/// A matched (complete, aligned, disordered) trio sharing background,
/// with aligned and disordered matched on position, theta_global and
/// edge length, and complete differing in theta_global.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub index: usize,
    pub complete: StimulusSpec,
    pub aligned: StimulusSpec,
    pub disordered: StimulusSpec,
    pub edge_length: u8,
}

/// All 992 specs in canonical order: condition-major, then background,
/// position, theta_global, edge_length, theta_local.
pub fn enumerate_specs() -> Vec<StimulusSpec> {
    let mut out = Vec::with_capacity(992);
    for condition in [Condition::Complete, Condition::Aligned, Condition::Disordered] {
        for background in [Background::Black, Background::White] {
            for position in [Position::Centered, Position::Offset] {
                for &theta_global in &THETA_GLOBALS {
                    let base = StimulusSpec {
                        condition,
                        background,
                        position,
                        theta_global,
                        edge_length: None,
                        theta_local: None,
                    };
                    match condition {
                        Condition::Complete => out.push(base),
                        Condition::Aligned => {
                            for &e in &EDGE_LENGTHS {
                                out.push(StimulusSpec { edge_length: Some(e), ..base });
                            }
                        }
                        Condition::Disordered => {
                            for &e in &EDGE_LENGTHS {
                                for &l in &THETA_LOCALS {
                                    out.push(StimulusSpec {
                                        edge_length: Some(e),
                                        theta_local: Some(l),
                                        ..base
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Position of `spec` in the canonical enumeration.
pub fn spec_index(spec: &StimulusSpec) -> Option<usize> {
    enumerate_specs().iter().position(|s| s == spec)
}

/// Fraction of each triangle side not covered by the two stubs
/// reaching into it from its endpoints.
pub fn removed_fraction(edge_length: u8) -> f64 {
    (VERTEX_DISTANCE - 2.0 * edge_length as f64) / VERTEX_DISTANCE
}

/// Triangle vertices for a given placement, counterclockwise from the
/// top vertex; y grows downward (image convention).
pub fn vertices(position: Position, theta_global: u16) -> [[f64; 2]; 3] {
    let [cx, cy] = position.centroid();
    let r = VERTEX_DISTANCE / 3.0f64.sqrt();
    let mut v = [[0.0; 2]; 3];
    for (k, out) in v.iter_mut().enumerate() {
        // normalizing the angle keeps equivalent rotations bit-identical
        let deg = (90.0 + 120.0 * k as f64 + theta_global as f64).rem_euclid(360.0);
        let (s, c) = deg.to_radians().sin_cos();
        *out = [cx + r * c, cy - r * s];
    }
    v
}

pub type Segment = [f64; 4];

fn rotate_about(p: [f64; 2], center: [f64; 2], deg: f64) -> [f64; 2] {
    let (s, c) = deg.rem_euclid(360.0).to_radians().sin_cos();
    let dx = p[0] - center[0];
    let dy = p[1] - center[1];
    // y grows downward, so a positive angle turns clockwise on screen
    [center[0] + c * dx + s * dy, center[1] - s * dx + c * dy]
}

fn toward(from: [f64; 2], to: [f64; 2], len: f64) -> [f64; 2] {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    let n = (dx * dx + dy * dy).sqrt();
    [from[0] + dx / n * len, from[1] + dy / n * len]
}

/// Stroke segments of the rendered shape. Aligned/Disordered segments
/// come in vertex order, two stubs per vertex.
pub fn segments_for(spec: &StimulusSpec) -> Result<Vec<Segment>> {
    spec.validate()?;
    let v = vertices(spec.position, spec.theta_global);
    match spec.condition {
        Condition::Complete => Ok((0..3)
            .map(|k| {
                let a = v[k];
                let b = v[(k + 1) % 3];
                [a[0], a[1], b[0], b[1]]
            })
            .collect()),
        Condition::Aligned | Condition::Disordered => {
            let e = spec.edge_length.unwrap() as f64;
            let mut segs = Vec::with_capacity(6);
            for k in 0..3 {
                let vert = v[k];
                for adj in [v[(k + 1) % 3], v[(k + 2) % 3]] {
                    let mut tip = toward(vert, adj, e);
                    let mut base = vert;
                    if let Some(l) = spec.theta_local {
                        tip = rotate_about(tip, vert, l as f64);
                        base = rotate_about(base, vert, l as f64);
                    }
                    segs.push([base[0], base[1], tip[0], tip[1]]);
                }
            }
            Ok(segs)
        }
    }
}

/// Stub segments grouped per vertex (Aligned/Disordered only).
pub fn corner_segments(spec: &StimulusSpec) -> Result<[[Segment; 2]; 3]> {
    if spec.condition == Condition::Complete {
        return Err(Error::InvalidSpec("complete shapes have no corner fragments".into()));
    }
    let segs = segments_for(spec)?;
    Ok([[segs[0], segs[1]], [segs[2], segs[3]], [segs[4], segs[5]]])
}

fn dist_to_segment(px: f64, py: f64, s: &Segment) -> f64 {
    let [x0, y0, x1, y1] = *s;
    let dx = x1 - x0;
    let dy = y1 - y0;
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0) };
    let cx = x0 + t * dx;
    let cy = y0 + t * dy;
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

/// Per-pixel coverage in [0, 1] of the capsule-stroke union (round
/// caps keep fragment corners filled), anti-aliased on a 2x2 subpixel
/// grid where each cell is covered by a linear ramp on the distance to
/// the strokes. Pixel (y, x) is the unit square centered at
/// (x + 0.5, y + 0.5).
pub fn stroke_coverage(
    height: usize,
    width: usize,
    segments: &[Segment],
    stroke_width: f64,
) -> Vec<f32> {
    let mut cov = vec![0f32; height * width];
    if segments.is_empty() {
        return cov;
    }
    let hw = stroke_width / 2.0;
    // coverage is exactly zero where the subpixel ramp never opens
    // (distance >= hw + 0.25), so only the padded segment bounding box
    // needs evaluation
    let pad = hw + 1.5;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in segments {
        x0 = x0.min(s[0]).min(s[2]);
        x1 = x1.max(s[0]).max(s[2]);
        y0 = y0.min(s[1]).min(s[3]);
        y1 = y1.max(s[1]).max(s[3]);
    }
    let xa = ((x0 - pad).floor().max(0.0)) as usize;
    let ya = ((y0 - pad).floor().max(0.0)) as usize;
    let xb = (((x1 + pad).ceil()) as usize).min(width);
    let yb = (((y1 + pad).ceil()) as usize).min(height);
    for y in ya..yb {
        for x in xa..xb {
            let mut c = 0.0;
            for (sy, sx) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let px = x as f64 + sx;
                let py = y as f64 + sy;
                let mut d = f64::INFINITY;
                for s in segments {
                    d = d.min(dist_to_segment(px, py, s));
                }
                c += (0.5 - 2.0 * (d - hw)).clamp(0.0, 1.0);
            }
            cov[y * width + x] = (c * 0.25) as f32;
        }
    }
    cov
}

/// Rasterizes strokes onto a background-filled grayscale image.
pub fn rasterize_strokes(
    height: usize,
    width: usize,
    segments: &[Segment],
    background: Background,
    stroke_width: f64,
) -> Image {
    let (bg, fg) = background.values();
    let mut img = Image::fill(height, width, CHANNELS, bg);
    let cov = stroke_coverage(height, width, segments, stroke_width);
    for y in 0..height {
        for x in 0..width {
            let c = cov[y * width + x];
            if c > 0.0 {
                let v = (bg as f64 + c as f64 * (fg - bg) as f64) as f32;
                for ch in 0..CHANNELS {
                    img.set(y, x, ch, v);
                }
            }
        }
    }
    img
}

/// Renders a spec at the default stroke width.
pub fn render(spec: &StimulusSpec) -> Result<Image> {
    render_with_stroke(spec, DEFAULT_STROKE_WIDTH)
}

pub fn render_with_stroke(spec: &StimulusSpec, stroke_width: f64) -> Result<Image> {
    let segs = segments_for(spec)?;
    Ok(rasterize_strokes(IMG_SIZE, IMG_SIZE, &segs, spec.background, stroke_width))
}

// each aligned spec serves its 4 theta_local variants automatically
const COMPLETE_QUOTA: usize = 24;
const MAX_RESTARTS: usize = 64;

/// Pairs every disordered spec with its aligned partner (unique, by the
/// matching rule) and a seeded quota-respecting complete spec.
pub fn build_triples(seed: u64) -> Result<Vec<Triple>> {
    build_triples_with(seed, false)
}

/// `strict` additionally forces complete and aligned to differ in
/// image position, not only in theta_global.
pub fn build_triples_with(seed: u64, strict: bool) -> Result<Vec<Triple>> {
    let specs = enumerate_specs();
    let mut aligned_by_key: BTreeMap<(Background, Position, u16, u8), StimulusSpec> = BTreeMap::new();
    let mut completes: Vec<StimulusSpec> = Vec::new();
    let mut disordered: Vec<StimulusSpec> = Vec::new();
    for s in &specs {
        match s.condition {
            Condition::Aligned => {
                aligned_by_key.insert(
                    (s.background, s.position, s.theta_global, s.edge_length.unwrap()),
                    *s,
                );
            }
            Condition::Complete => completes.push(*s),
            Condition::Disordered => disordered.push(*s),
        }
    }

    let mut rng = rng::keyed(seed, &[STREAM_TRIPLES]);
    for restart in 0..MAX_RESTARTS {
        let mut order: Vec<usize> = (0..disordered.len()).collect();
        order.shuffle(&mut rng);
        let mut quota = vec![COMPLETE_QUOTA; completes.len()];
        let mut chosen: Vec<Option<usize>> = vec![None; disordered.len()];
        let mut stuck = false;
        for &di in &order {
            let d = &disordered[di];
            let best = {
                let admissible = completes.iter().enumerate().filter(|(ci, c)| {
                    quota[*ci] > 0
                        && c.background == d.background
                        && c.theta_global != d.theta_global
                        && (!strict || c.position != d.position)
                });
                // draining the fullest quota first keeps the assignment feasible
                let max_q = admissible.clone().map(|(ci, _)| quota[ci]).max();
                match max_q {
                    None => None,
                    Some(mq) => {
                        let ties: Vec<usize> =
                            admissible.filter(|(ci, _)| quota[*ci] == mq).map(|(ci, _)| ci).collect();
                        Some(ties[rng.gen_range(0..ties.len())])
                    }
                }
            };
            match best {
                Some(ci) => {
                    quota[ci] -= 1;
                    chosen[di] = Some(ci);
                }
                None => {
                    stuck = true;
                    break;
                }
            }
        }
        if stuck {
            continue;
        }
        if quota.iter().any(|&q| q != 0) {
            return Err(Error::TripleAssignment {
                restarts: restart,
                reason: "complete quotas not exhausted".into(),
            });
        }
        let mut out = Vec::with_capacity(disordered.len());
        for (i, d) in disordered.iter().enumerate() {
            let e = d.edge_length.unwrap();
            let aligned = aligned_by_key[&(d.background, d.position, d.theta_global, e)];
            out.push(Triple {
                index: i,
                complete: completes[chosen[i].unwrap()],
                aligned,
                disordered: *d,
                edge_length: e,
            });
        }
        debug_assert_eq!(out.len(), 768);
        return Ok(out);
    }
    Err(Error::TripleAssignment {
        restarts: MAX_RESTARTS,
        reason: "no quota-satisfying assignment found".into(),
    })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ExportFormat {
    Png,
    RawF32,
}

impl ExportFormat {
    pub fn ext(self) -> &'static str {
        match self {
            ExportFormat::Png => "png",
            ExportFormat::RawF32 => "raw",
        }
    }
}

pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let px = |c: usize| {
                let v01 = (img.get(y, x, c) + 1.0) / 2.0;
                (v01 * 255.0).round().clamp(0.0, 255.0) as u8
            };
            buf.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
        }
    }
    buf.save(path).map_err(|e| Error::FileFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_raw_f32(img: &Image, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(img.values.len() * 4);
    for v in &img.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_raw_f32(path: &Path, height: usize, width: usize, channels: usize) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != height * width * channels * 4 {
        return Err(Error::FileFormat {
            path: path.to_path_buf(),
            message: format!("expected {} bytes, found {}", height * width * channels * 4, bytes.len()),
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Image { height, width, channels, values })
}

/// Renders every spec into `dir` and writes the manifest CSV; returns
/// the manifest path.
pub fn export_stimuli(dir: &Path, format: ExportFormat) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let specs = enumerate_specs();
    let manifest_path = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest_path).map_err(|e| Error::FileFormat {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    w.write_record([
        "index",
        "condition",
        "background",
        "position",
        "theta_global",
        "edge_length",
        "theta_local",
        "filename",
    ])
    .map_err(|e| Error::FileFormat {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    for (i, spec) in specs.iter().enumerate() {
        let name = spec.filename(i, format.ext());
        let img = render(spec)?;
        let path = dir.join(&name);
        match format {
            ExportFormat::Png => write_png(&img, &path)?,
            ExportFormat::RawF32 => write_raw_f32(&img, &path)?,
        }
        w.write_record([
            i.to_string(),
            spec.condition.as_str().to_string(),
            spec.background.as_str().to_string(),
            spec.position.as_str().to_string(),
            spec.theta_global.to_string(),
            spec.edge_length.map(|e| e.to_string()).unwrap_or_default(),
            spec.theta_local.map(|l| l.to_string()).unwrap_or_default(),
            name,
        ])
        .map_err(|e| Error::FileFormat {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Triples CSV: canonical spec indices per member.
pub fn write_triples_csv(path: &Path, triples: &[Triple]) -> Result<()> {
    let specs = enumerate_specs();
    let index_of: BTreeMap<StimulusSpec, usize> =
        specs.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::FileFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    w.write_record(["index", "edge_length", "complete_index", "aligned_index", "disordered_index"])
        .map_err(|e| Error::FileFormat { path: path.to_path_buf(), message: e.to_string() })?;
    for t in triples {
        w.write_record([
            t.index.to_string(),
            t.edge_length.to_string(),
            index_of[&t.complete].to_string(),
            index_of[&t.aligned].to_string(),
            index_of[&t.disordered].to_string(),
        ])
        .map_err(|e| Error::FileFormat { path: path.to_path_buf(), message: e.to_string() })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_triples_csv(path: &Path) -> Result<Vec<Triple>> {
    let specs = enumerate_specs();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::FileFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::FileFormat {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let parse = |i: usize| -> Result<usize> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::FileFormat {
                    path: path.to_path_buf(),
                    message: format!("bad field {i} in row {rec:?}"),
                })
        };
        let t = Triple {
            index: parse(0)?,
            edge_length: parse(1)? as u8,
            complete: specs[parse(2)?],
            aligned: specs[parse(3)?],
            disordered: specs[parse(4)?],
        };
        if t.complete.condition != Condition::Complete
            || t.aligned.condition != Condition::Aligned
            || t.disordered.condition != Condition::Disordered
        {
            return Err(Error::FileFormat {
                path: path.to_path_buf(),
                message: format!("row {} members do not match their roles", t.index),
            });
        }
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_starts_with_completes() {
        let specs = enumerate_specs();
        assert_eq!(specs[0].condition, Condition::Complete);
        assert_eq!(specs[0].background, Background::Black);
        assert_eq!(specs[0].position, Position::Centered);
        assert_eq!(specs[0].theta_global, 0);
        assert_eq!(specs[31].condition, Condition::Complete);
        assert_eq!(specs[32].condition, Condition::Aligned);
        assert_eq!(specs[224].condition, Condition::Disordered);
    }

    #[test]
    fn rejects_malformed_specs() {
        let bad = StimulusSpec {
            condition: Condition::Complete,
            background: Background::Black,
            position: Position::Centered,
            theta_global: 0,
            edge_length: Some(3),
            theta_local: None,
        };
        assert!(bad.validate().is_err());
        let bad_level = StimulusSpec { theta_global: 7, edge_length: None, ..bad };
        assert!(bad_level.validate().is_err());
        assert!(render(&bad_level).is_err());
    }
}

//! File formats: JSON Lines detections, annotations, verdicts and labels;
//! binary PGM (`P5`) masks; CSV miss-rate curves.
//!
//! Detection lines look like
//! `{"id":"c1","frame":"f0","bbox":[x,y,w,h],"score":0.9}`. Fused output adds
//! `"fused"` (9 significant digits, may exceed 1) and `"factors"`, a list of
//! `[source, factor]` pairs; on reading, the fused score is recomputed from
//! the factors and checked against `"fused"`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MissRateCurve;
use crate::fusion::{Candidate, VerdictSet};
use crate::geometry::{BoundingBox, Category, GroundTruthAnnotation, SegmentationMask};

/// Allowed gap between an explicit `occlusion` and the one implied by
/// `visible_bbox`.
pub const OCCLUSION_TOLERANCE: f64 = 0.02;

const FUSED_RELATIVE_TOLERANCE: f64 = 1e-8;

/// Rounds to 9 significant digits.
pub fn round_significant(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    id: String,
    frame: String,
    bbox: [f64; 4],
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fused: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    factors: Vec<(String, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    frame: String,
    bbox: [f64; 4],
    category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    visible_bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    occlusion: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VerdictRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classifier: Option<String>,
    p: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub frame: String,
    pub label: u8,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

/// Calls `f` with the 1-based line number and parsed record of every
/// non-blank line. Errors from `f` are tagged with the line.
fn for_each_record<T, R, F>(reader: R, path: &Path, mut f: F) -> Result<()>
where
    T: DeserializeOwned,
    R: BufRead,
    F: FnMut(T) -> Result<()>,
{
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| parse_error(path, line_no, e))?;
        f(record).map_err(|e| match e {
            e @ Error::Parse { .. } => e,
            other => parse_error(path, line_no, other),
        })?;
    }
    Ok(())
}

fn write_record<W: Write, T: Serialize>(out: &mut W, record: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, record).map_err(|e| match e.io_error_kind() {
        Some(kind) => Error::io("<output>", std::io::Error::from(kind)),
        None => Error::InvalidParameter(format!("serialization failed: {e}")),
    })?;
    out.write_all(b"\n").map_err(|e| Error::io("<output>", e))
}

fn candidate_from_record(r: DetectionRecord) -> Result<Candidate> {
    let bbox = BoundingBox::try_from(r.bbox)?;
    let mut c = Candidate::new(r.id, r.frame, bbox, r.score)?;
    for (source, factor) in r.factors {
        c.apply_factor(source, factor)?;
    }
    if let Some(fused) = r.fused {
        let expected = c.score_fused();
        let tolerance = FUSED_RELATIVE_TOLERANCE * expected.abs().max(f64::MIN_POSITIVE);
        if (fused - expected).abs() > tolerance {
            return Err(Error::InvalidParameter(format!(
                "fused score {fused} does not match score times factors ({expected})"
            )));
        }
    }
    Ok(c)
}

pub fn parse_detections<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for_each_record(reader, path, |r: DetectionRecord| {
        if !seen.insert(r.id.clone()) {
            return Err(Error::InvalidParameter(format!(
                "duplicate candidate id '{}'",
                r.id
            )));
        }
        out.push(candidate_from_record(r)?);
        Ok(())
    })?;
    Ok(out)
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Candidate>> {
    let path = path.as_ref();
    parse_detections(open(path)?, path)
}

pub fn write_detections<W: Write>(out: &mut W, candidates: &[Candidate]) -> Result<()> {
    for c in candidates {
        let factors: Vec<(String, f64)> = c
            .applied_factors()
            .iter()
            .map(|f| (f.source.clone(), f.factor))
            .collect();
        let record = DetectionRecord {
            id: c.id.clone(),
            frame: c.frame_id.clone(),
            bbox: c.bbox.to_array(),
            score: c.score_generator(),
            fused: (!factors.is_empty()).then(|| round_significant(c.score_fused())),
            factors,
        };
        write_record(out, &record)?;
    }
    Ok(())
}

pub fn write_detections_file(path: impl AsRef<Path>, candidates: &[Candidate]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    write_detections(&mut out, candidates)?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn annotation_from_record(r: AnnotationRecord) -> Result<GroundTruthAnnotation> {
    let g = GroundTruthAnnotation::new(r.frame, BoundingBox::try_from(r.bbox)?, r.category);
    match (r.visible_bbox, r.occlusion) {
        (Some(vis), occ) => {
            let g = g.with_visible_box(BoundingBox::try_from(vis)?)?;
            if let Some(occ) = occ {
                let derived = g.occlusion_fraction();
                if (occ - derived).abs() > OCCLUSION_TOLERANCE {
                    return Err(Error::InvalidParameter(format!(
                        "occlusion {occ} disagrees with visible_bbox ({derived:.4})"
                    )));
                }
            }
            Ok(g)
        }
        (None, Some(occ)) => g.with_occlusion(occ),
        (None, None) => Ok(g),
    }
}

pub fn parse_annotations<R: BufRead>(reader: R, path: &Path) -> Result<Vec<GroundTruthAnnotation>> {
    let mut out = Vec::new();
    for_each_record(reader, path, |r: AnnotationRecord| {
        out.push(annotation_from_record(r)?);
        Ok(())
    })?;
    Ok(out)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<GroundTruthAnnotation>> {
    let path = path.as_ref();
    parse_annotations(open(path)?, path)
}

pub fn write_annotations<W: Write>(out: &mut W, gt: &[GroundTruthAnnotation]) -> Result<()> {
    for g in gt {
        let record = AnnotationRecord {
            frame: g.frame_id.clone(),
            bbox: g.bbox.to_array(),
            category: g.category,
            visible_bbox: g.visible_box().map(|b| b.to_array()),
            occlusion: (g.visible_box().is_none() && g.occlusion_fraction() != 0.0)
                .then(|| g.occlusion_fraction()),
        };
        write_record(out, &record)?;
    }
    Ok(())
}

pub fn write_annotations_file(path: impl AsRef<Path>, gt: &[GroundTruthAnnotation]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    write_annotations(&mut out, gt)?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads `{"id", "classifier"?, "p"}` lines. Lines without a classifier are
/// attributed to the file stem. Output is sorted by classifier id.
pub fn read_verdicts(path: impl AsRef<Path>) -> Result<Vec<VerdictSet>> {
    let path = path.as_ref();
    let default_id = file_stem(path);
    let mut verdicts = Vec::new();
    for_each_record(open(path)?, path, |r: VerdictRecord| {
        let classifier = r.classifier.unwrap_or_else(|| default_id.clone());
        verdicts.push(crate::fusion::ClassifierVerdict::new(r.id, classifier, r.p)?);
        Ok(())
    })?;
    VerdictSet::group(verdicts).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes one verdict set in ascending candidate-id order.
pub fn write_verdicts<W: Write>(out: &mut W, set: &VerdictSet) -> Result<()> {
    for v in set.verdicts() {
        write_record(
            out,
            &VerdictRecord {
                id: v.candidate_id,
                classifier: Some(v.classifier_id),
                p: v.probability,
            },
        )?;
    }
    Ok(())
}

pub fn write_verdicts_file(path: impl AsRef<Path>, set: &VerdictSet) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    write_verdicts(&mut out, set)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_labels<W: Write>(out: &mut W, labels: &[LabelRecord]) -> Result<()> {
    labels.iter().try_for_each(|l| write_record(out, l))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Decodes a binary PGM. Pixels above zero are pedestrian pixels.
pub fn parse_pgm(bytes: &[u8], frame_id: &str, path: &Path) -> Result<SegmentationMask> {
    let fail = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(fail("not a binary PGM (expected magic P5)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(fail("malformed PGM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail("PGM header value out of range"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(fail("PGM has zero width or height"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(fail("PGM maxval must be in 1..=255"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(fail("malformed PGM header"));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| fail("PGM dimensions overflow"))?;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| fail("truncated PGM raster"))?;
    SegmentationMask::new(frame_id, width, height, raster.iter().map(|&b| b > 0).collect())
}

/// Reads a `P5` mask; the frame id is the file stem.
pub fn read_mask(path: impl AsRef<Path>) -> Result<SegmentationMask> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes, &file_stem(path), path)
}

pub fn encode_pgm(mask: &SegmentationMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.pixels().iter().map(|&p| if p { 255u8 } else { 0 }));
    out
}

pub fn write_mask(path: impl AsRef<Path>, mask: &SegmentationMask) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}

/// Path of the mask for `frame_id` inside `dir`.
pub fn mask_path(dir: &Path, frame_id: &str) -> PathBuf {
    dir.join(format!("{frame_id}.pgm"))
}

pub fn write_curve(path: impl AsRef<Path>, curve: &MissRateCurve) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, curve.to_csv()).map_err(|e| Error::io(path, e))
}

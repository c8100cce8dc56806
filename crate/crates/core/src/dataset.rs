//! On-disk layout: palette PNG masks, candidate folders with score
//! sidecars, ground-truth boxes and per-sequence outputs.
//!
//! ```text
//! <seq>/gt/<frame:05>.png             palette labels, 0 = background
//! <seq>/candidates/<frame:05>/*.png   one binary mask per candidate
//! <seq>/candidates/<frame:05>/scores.json
//! <seq>/boxes.csv                     frame,x0,y0,x1,y1
//! <seq>/flow/gap_<g>/<frame:05>.flo
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::association::SequenceTracks;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::flowio::RgbImage;
use crate::frame::{FrameMasks, ScoredMask};
use crate::mask::Mask;
use crate::selection::CandidateSet;

/// An 8-bit label image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

/// The PASCAL VOC colormap, 256 RGB triples.
pub fn voc_palette() -> Vec<u8> {
    let mut pal = Vec::with_capacity(768);
    for i in 0..256u32 {
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        let mut c = i;
        for j in 0..8 {
            r |= ((c & 1) as u8) << (7 - j);
            g |= (((c >> 1) & 1) as u8) << (7 - j);
            b |= (((c >> 2) & 1) as u8) << (7 - j);
            c >>= 3;
        }
        pal.extend_from_slice(&[r, g, b]);
    }
    pal
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("png: {e}"))
}

pub fn encode_label_png(img: &LabelImage) -> Result<Vec<u8>> {
    if img.labels.len() != img.height * img.width {
        return Err(Error::Length {
            expected: img.height * img.width,
            found: img.labels.len(),
        });
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(voc_palette());
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&img.labels).map_err(png_err)?;
    }
    Ok(out)
}

/// Accepts 8-bit indexed or 8-bit grayscale images; pixel values are labels.
pub fn decode_label_png(bytes: &[u8]) -> Result<LabelImage> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(png_err)?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight || !matches!(color, png::ColorType::Indexed | png::ColorType::Grayscale) {
        return Err(Error::Format(format!(
            "label images must be 8-bit indexed or grayscale, found {color:?} {depth:?}"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut labels = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        labels.extend_from_slice(&row[..w]);
    }
    Ok(LabelImage {
        height: h,
        width: w,
        labels,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::missing(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_label_png(path: &Path) -> Result<LabelImage> {
    decode_label_png(&read_bytes(path)?).map_err(|e| Error::missing(path, e))
}

pub fn write_label_png(path: &Path, img: &LabelImage) -> Result<()> {
    write_bytes(path, &encode_label_png(img)?)
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(&img.data).map_err(png_err)?;
    Ok(())
}

/// Object `k` becomes label `k + 1`. Masks must be disjoint.
pub fn masks_to_labels(masks: &[Mask], height: usize, width: usize) -> Result<LabelImage> {
    if masks.len() > 255 {
        return Err(Error::Parameter(format!("{} objects exceed 255 labels", masks.len())));
    }
    let mut labels = vec![0u8; height * width];
    for (k, m) in masks.iter().enumerate() {
        if m.dims() != (height, width) {
            return Err(Error::Shape {
                expected: (height, width),
                found: m.dims(),
            });
        }
        for (x, y) in m.iter_ones() {
            let px = &mut labels[y * width + x];
            if *px != 0 {
                return Err(Error::InvalidInput(format!(
                    "objects {} and {k} overlap at ({x}, {y})",
                    *px - 1
                )));
            }
            *px = k as u8 + 1;
        }
    }
    Ok(LabelImage { height, width, labels })
}

/// One mask per label `1..=n`; `n` defaults to the largest label present.
pub fn labels_to_masks(img: &LabelImage, n: Option<usize>) -> Result<Vec<Mask>> {
    let n = n.unwrap_or_else(|| img.labels.iter().copied().max().unwrap_or(0) as usize);
    let mut masks = vec![Mask::empty(img.height, img.width)?; n];
    for (i, &l) in img.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        if l as usize > n {
            return Err(Error::InvalidInput(format!("label {l} exceeds object count {n}")));
        }
        masks[l as usize - 1].set(i % img.width, i / img.width, true);
    }
    Ok(masks)
}

fn frame_name(t: usize) -> String {
    format!("{t:05}")
}

/// Sorted frame indices named by `NNNNN` entries (with optional extension)
/// in `dir`; the indices must run 0, 1, 2, ….
fn list_frames(dir: &Path, ext: Option<&str>) -> Result<Vec<(usize, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::missing(dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let path = e?.path();
        let matches_ext = match ext {
            Some(x) => path.extension().is_some_and(|e| e == x),
            None => path.is_dir(),
        };
        if !matches_ext {
            continue;
        }
        if let Some(t) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
            out.push((t, path));
        }
    }
    out.sort();
    for (i, (t, _)) in out.iter().enumerate() {
        if *t != i {
            return Err(Error::InvalidInput(format!(
                "{}: frames must be numbered from 0 without gaps, found {t} at position {i}",
                dir.display()
            )));
        }
    }
    Ok(out)
}

pub fn count_frames(dir: &Path, ext: Option<&str>) -> Result<usize> {
    Ok(list_frames(dir, ext)?.len())
}

/// Ground-truth masks of a sequence; the object count is the largest label
/// seen in any frame.
pub fn read_gt(seq_dir: &Path) -> Result<Vec<Vec<Mask>>> {
    let images: Vec<LabelImage> = list_frames(&seq_dir.join("gt"), Some("png"))?
        .iter()
        .map(|(_, p)| read_label_png(p))
        .collect::<Result<_>>()?;
    let n = images
        .iter()
        .flat_map(|i| i.labels.iter().copied())
        .max()
        .unwrap_or(0) as usize;
    images.iter().map(|i| labels_to_masks(i, Some(n))).collect()
}

pub fn write_gt(seq_dir: &Path, gt: &SequenceTracks) -> Result<()> {
    for (t, masks) in gt.frames.iter().enumerate() {
        let img = masks_to_labels(masks, gt.height, gt.width)?;
        write_label_png(&seq_dir.join("gt").join(format!("{}.png", frame_name(t))), &img)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreEntry {
    pub fiou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mos: Option<f64>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::missing(path, format!("invalid JSON: {e}")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn candidate_dir(seq_dir: &Path, frame: usize) -> PathBuf {
    seq_dir.join("candidates").join(frame_name(frame))
}

/// Number of candidate frame folders in a sequence.
pub fn count_candidate_frames(seq_dir: &Path) -> Result<usize> {
    count_frames(&seq_dir.join("candidates"), None)
}

/// Loads every candidate mask of one frame; `scores.json` must list each
/// PNG in the folder. Candidates come back in filename order.
pub fn read_candidates(seq_dir: &Path, frame: usize) -> Result<CandidateSet> {
    let dir = candidate_dir(seq_dir, frame);
    let scores: BTreeMap<String, ScoreEntry> = read_json(&dir.join("scores.json"))?;
    let mut names: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| Error::missing(&dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    for n in scores.keys() {
        if !names.contains(n) {
            return Err(Error::missing(dir.join(n), "listed in scores.json but absent"));
        }
    }
    let mut dims = None;
    let mut cands = Vec::with_capacity(names.len());
    for n in &names {
        let path = dir.join(n);
        let s = scores
            .get(n)
            .ok_or_else(|| Error::missing(dir.join("scores.json"), format!("no entry for {n}")))?;
        let img = read_label_png(&path)?;
        let m = Mask::from_fn(img.height, img.width, |x, y| img.labels[y * img.width + x] != 0)?;
        match dims {
            None => dims = Some(m.dims()),
            Some(d) if d != m.dims() => {
                return Err(Error::missing(
                    path,
                    format!("size {:?} differs from {:?}", m.dims(), d),
                ))
            }
            _ => {}
        }
        cands.push(ScoredMask::new(m, s.fiou, s.mos).map_err(|e| Error::missing(dir.join("scores.json"), e))?);
    }
    let (h, w) = match dims {
        Some(d) => d,
        None => return Err(Error::missing(&dir, "no candidate masks")),
    };
    CandidateSet::new(frame, h, w, 0, cands)
}

pub fn write_candidates(seq_dir: &Path, c: &CandidateSet) -> Result<()> {
    let dir = candidate_dir(seq_dir, c.frame_index);
    let mut scores = BTreeMap::new();
    for (i, cand) in c.candidates.iter().enumerate() {
        let name = format!("{i:03}.png");
        let img = masks_to_labels(std::slice::from_ref(&cand.mask), c.height, c.width)?;
        write_label_png(&dir.join(&name), &img)?;
        scores.insert(name, ScoreEntry { fiou: cand.fiou, mos: cand.mos });
    }
    write_json(&dir.join("scores.json"), &scores)
}

/// Writes selected per-frame predictions: one label PNG per frame (label =
/// list position + 1) and a `scores.json` keyed by frame name.
pub fn write_frame_masks(dir: &Path, frames: &[FrameMasks]) -> Result<()> {
    let mut scores: BTreeMap<String, Vec<ScoreEntry>> = BTreeMap::new();
    for fm in frames {
        let img = masks_to_labels(&fm.masks(), fm.height, fm.width)?;
        write_label_png(&dir.join(format!("{}.png", frame_name(fm.frame_index))), &img)?;
        scores.insert(
            frame_name(fm.frame_index),
            fm.objects.iter().map(|o| ScoreEntry { fiou: o.fiou, mos: o.mos }).collect(),
        );
    }
    write_json(&dir.join("scores.json"), &scores)
}

pub fn read_frame_masks(dir: &Path) -> Result<Vec<FrameMasks>> {
    let scores: BTreeMap<String, Vec<ScoreEntry>> = read_json(&dir.join("scores.json"))?;
    let mut out = Vec::new();
    for (t, path) in list_frames(dir, Some("png"))? {
        let entries = scores
            .get(&frame_name(t))
            .ok_or_else(|| Error::missing(dir.join("scores.json"), format!("no entry for frame {t}")))?;
        let img = read_label_png(&path)?;
        let masks = labels_to_masks(&img, Some(entries.len())).map_err(|e| Error::missing(&path, e))?;
        let mut fm = FrameMasks::new(t, img.height, img.width);
        for (m, s) in masks.into_iter().zip(entries) {
            fm.objects.push(ScoredMask::new(m, s.fiou, s.mos)?);
        }
        fm.rerank();
        out.push(fm);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracksMeta {
    pub num_objects: usize,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub layer_order: Vec<usize>,
}

/// Label PNG per frame plus `tracks.json` carrying the object count and
/// layer order (objects may be empty at some frames).
pub fn write_tracks(dir: &Path, tracks: &SequenceTracks) -> Result<()> {
    for (t, masks) in tracks.frames.iter().enumerate() {
        let img = masks_to_labels(masks, tracks.height, tracks.width)?;
        write_label_png(&dir.join(format!("{}.png", frame_name(t))), &img)?;
    }
    let meta = TracksMeta {
        num_objects: tracks.num_objects(),
        num_frames: tracks.num_frames(),
        height: tracks.height,
        width: tracks.width,
        layer_order: tracks.layer_order.clone(),
    };
    write_json(&dir.join("tracks.json"), &meta)
}

pub fn read_tracks(dir: &Path) -> Result<SequenceTracks> {
    let meta: TracksMeta = read_json(&dir.join("tracks.json"))?;
    let files = list_frames(dir, Some("png"))?;
    if files.len() != meta.num_frames {
        return Err(Error::FrameCount {
            expected: meta.num_frames,
            found: files.len(),
        });
    }
    let frames = files
        .iter()
        .map(|(_, p)| {
            let img = read_label_png(p)?;
            if (img.height, img.width) != (meta.height, meta.width) {
                return Err(Error::Shape {
                    expected: (meta.height, meta.width),
                    found: (img.height, img.width),
                });
            }
            labels_to_masks(&img, Some(meta.num_objects))
        })
        .collect::<Result<_>>()?;
    Ok(SequenceTracks {
        height: meta.height,
        width: meta.width,
        frames,
        layer_order: meta.layer_order,
    })
}

pub fn read_boxes(path: &Path) -> Result<BTreeMap<usize, BBox>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::missing(path, e))?;
    let mut out = BTreeMap::new();
    for rec in rdr.deserialize::<(usize, u32, u32, u32, u32)>() {
        let (f, x0, y0, x1, y1) = rec.map_err(|e| Error::missing(path, e))?;
        out.insert(f, BBox::new(x0, y0, x1, y1).map_err(|e| Error::missing(path, e))?);
    }
    Ok(out)
}

pub fn write_boxes(path: &Path, boxes: &[Option<BBox>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    wtr.write_record(["frame", "x0", "y0", "x1", "y1"]).map_err(csv_err)?;
    for (t, b) in boxes.iter().enumerate() {
        if let Some(b) = b {
            wtr.serialize((t, b.x0, b.y0, b.x1, b.y1)).map_err(csv_err)?;
        }
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(h: usize, w: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        Mask::from_fn(h, w, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1).unwrap()
    }

    #[test]
    fn palette_head() {
        let p = voc_palette();
        assert_eq!(&p[..12], &[0, 0, 0, 128, 0, 0, 0, 128, 0, 128, 128, 0]);
        assert_eq!(p.len(), 768);
    }

    #[test]
    fn label_png_roundtrip() {
        let labels: Vec<u8> = (0..7 * 5).map(|i| (i * 37 % 256) as u8).collect();
        let img = LabelImage {
            height: 5,
            width: 7,
            labels,
        };
        assert_eq!(decode_label_png(&encode_label_png(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn rejects_rgb_as_labels() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 2);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[0; 12]).unwrap();
        }
        assert!(matches!(decode_label_png(&out), Err(Error::Format(_))));
        assert!(decode_label_png(b"not a png").is_err());
    }

    #[test]
    fn masks_labels_roundtrip() {
        let masks = vec![rect(6, 8, 0, 0, 3, 3), Mask::empty(6, 8).unwrap(), rect(6, 8, 4, 2, 8, 6)];
        let img = masks_to_labels(&masks, 6, 8).unwrap();
        assert_eq!(labels_to_masks(&img, Some(3)).unwrap(), masks);
        assert_eq!(labels_to_masks(&img, None).unwrap(), masks);
        let overlap = vec![rect(6, 8, 0, 0, 3, 3), rect(6, 8, 2, 2, 4, 4)];
        assert!(masks_to_labels(&overlap, 6, 8).is_err());
        assert!(labels_to_masks(&img, Some(1)).is_err());
    }

    #[test]
    fn candidates_roundtrip_and_missing_scores() {
        let dir = tempfile::tempdir().unwrap();
        let cands = vec![
            ScoredMask::new(rect(6, 8, 0, 0, 3, 3), 0.9, Some(0.4)).unwrap(),
            ScoredMask::new(rect(6, 8, 2, 2, 6, 6), 0.3, None).unwrap(),
        ];
        let c = CandidateSet::new(2, 6, 8, 0, cands).unwrap();
        write_candidates(dir.path(), &c).unwrap();
        assert_eq!(read_candidates(dir.path(), 2).unwrap(), c);

        fs::remove_file(candidate_dir(dir.path(), 2).join("scores.json")).unwrap();
        match read_candidates(dir.path(), 2) {
            Err(Error::MissingInput { path, .. }) => assert!(path.ends_with("scores.json")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn candidates_missing_entry() {
        let dir = tempfile::tempdir().unwrap();
        let c = CandidateSet::new(0, 4, 4, 0, vec![ScoredMask::new(rect(4, 4, 0, 0, 2, 2), 0.5, None).unwrap()]).unwrap();
        write_candidates(dir.path(), &c).unwrap();
        write_json(&candidate_dir(dir.path(), 0).join("scores.json"), &BTreeMap::<String, ScoreEntry>::new()).unwrap();
        assert!(matches!(read_candidates(dir.path(), 0), Err(Error::MissingInput { .. })));
    }

    #[test]
    fn frame_masks_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = FrameMasks::new(0, 6, 8);
        a.objects.push(ScoredMask::new(rect(6, 8, 0, 0, 3, 3), 0.75, Some(1.0)).unwrap());
        a.objects.push(ScoredMask::new(rect(6, 8, 4, 0, 8, 3), 0.5, None).unwrap());
        a.rerank();
        let b = FrameMasks::new(1, 6, 8);
        write_frame_masks(dir.path(), &[a.clone(), b.clone()]).unwrap();
        assert_eq!(read_frame_masks(dir.path()).unwrap(), vec![a, b]);
    }

    #[test]
    fn tracks_and_gt_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let tracks = SequenceTracks {
            height: 6,
            width: 8,
            frames: vec![
                vec![rect(6, 8, 0, 0, 2, 2), rect(6, 8, 5, 5, 8, 6)],
                vec![rect(6, 8, 1, 0, 3, 2), Mask::empty(6, 8).unwrap()],
            ],
            layer_order: vec![1, 0],
        };
        write_tracks(&dir.path().join("tracks"), &tracks).unwrap();
        assert_eq!(read_tracks(&dir.path().join("tracks")).unwrap(), tracks);
        write_gt(dir.path(), &tracks).unwrap();
        assert_eq!(read_gt(dir.path()).unwrap(), tracks.frames);
    }

    #[test]
    fn frame_numbering_must_be_contiguous() {
        let dir = tempfile::tempdir().unwrap();
        let img = LabelImage {
            height: 1,
            width: 1,
            labels: vec![0],
        };
        write_label_png(&dir.path().join("gt/00000.png"), &img).unwrap();
        write_label_png(&dir.path().join("gt/00002.png"), &img).unwrap();
        assert!(matches!(read_gt(dir.path()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn boxes_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("boxes.csv");
        let boxes = vec![Some(BBox::new(0, 0, 4, 4).unwrap()), None, Some(BBox::new(1, 2, 3, 5).unwrap())];
        write_boxes(&p, &boxes).unwrap();
        let back = read_boxes(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[&2], boxes[2].unwrap());
        assert_eq!(fs::read_to_string(&p).unwrap().lines().next(), Some("frame,x0,y0,x1,y1"));
    }

    #[test]
    fn rgb_png_writes() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage {
            width: 2,
            height: 1,
            data: vec![255, 255, 255, 0, 0, 0],
        };
        let p = dir.path().join("v.png");
        write_rgb_png(&p, &img).unwrap();
        let mut dec = png::Decoder::new(std::io::BufReader::new(fs::File::open(&p).unwrap()));
        dec.set_transformations(png::Transformations::IDENTITY);
        let mut r = dec.read_info().unwrap();
        let mut buf = vec![0; r.output_buffer_size().unwrap()];
        r.next_frame(&mut buf).unwrap();
        assert_eq!(&buf[..6], &img.data[..]);
    }
}

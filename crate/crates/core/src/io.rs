//! File formats: detection and ground-truth JSON, metric CSV, and atomic writes.
//!
//! Boxes are stored in corner form `[x0, y0, x1, y1]`. Files in COCO's
//! `[x, y, w, h]` form can be read with [`BoxFormat::Coco`].

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection, GroundTruthBox};

/// Records grouped by image id, iterated in sorted id order.
pub type ImageMap<T> = BTreeMap<String, Vec<T>>;

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_string(path: &Path, s: &str) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(s.as_bytes())?))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        Ok(w.write_all(b"\n")?)
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoxFormat {
    /// `[x0, y0, x1, y1]`
    #[default]
    Corners,
    /// `[x, y, w, h]`
    Coco,
}

impl BoxFormat {
    fn decode(self, a: [f64; 4]) -> BoundingBox {
        match self {
            Self::Corners => BoundingBox::from_array(a),
            Self::Coco => BoundingBox::new(a[0], a[1], a[0] + a[2], a[1] + a[3]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class_id: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub cls_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loc_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub class_id: u32,
    pub object_id: u64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

pub fn detections_to_records(dets: &ImageMap<Detection>) -> Vec<DetectionRecord> {
    dets.iter()
        .flat_map(|(id, ds)| {
            ds.iter().map(move |d| DetectionRecord {
                image_id: id.clone(),
                class_id: d.class_id,
                bbox: d.bbox.to_array(),
                cls_score: d.cls_score,
                loc_score: d.loc_score,
            })
        })
        .collect()
}

/// Groups records by image, keeping file order within an image, and
/// validates every detection.
pub fn records_to_detections(records: &[DetectionRecord], format: BoxFormat) -> Result<ImageMap<Detection>> {
    let mut out = ImageMap::new();
    for (k, r) in records.iter().enumerate() {
        let d = Detection {
            bbox: format.decode(r.bbox),
            class_id: r.class_id,
            cls_score: r.cls_score,
            loc_score: r.loc_score,
        };
        d.validate()
            .map_err(|e| Error::InvalidArgument(format!("detection record {k} ({}): {e}", r.image_id)))?;
        out.entry(r.image_id.clone()).or_insert_with(Vec::new).push(d);
    }
    Ok(out)
}

pub fn ground_truth_to_records(gts: &ImageMap<GroundTruthBox>) -> Vec<GroundTruthRecord> {
    gts.iter()
        .flat_map(|(id, gs)| {
            gs.iter().map(move |g| GroundTruthRecord {
                image_id: id.clone(),
                class_id: g.class_id,
                object_id: g.object_id,
                bbox: g.bbox.to_array(),
            })
        })
        .collect()
}

pub fn records_to_ground_truth(records: &[GroundTruthRecord], format: BoxFormat) -> Result<ImageMap<GroundTruthBox>> {
    let mut out = ImageMap::new();
    for (k, r) in records.iter().enumerate() {
        let bbox = format.decode(r.bbox);
        bbox.validate()
            .map_err(|e| Error::InvalidArgument(format!("ground-truth record {k} ({}): {e}", r.image_id)))?;
        out.entry(r.image_id.clone()).or_insert_with(Vec::new).push(GroundTruthBox {
            bbox,
            class_id: r.class_id,
            object_id: r.object_id,
        });
    }
    Ok(out)
}

pub fn read_detections(path: &Path, format: BoxFormat) -> Result<ImageMap<Detection>> {
    let records: Vec<DetectionRecord> = read_json(path)?;
    records_to_detections(&records, format)
}

pub fn write_detections(path: &Path, dets: &ImageMap<Detection>) -> Result<()> {
    write_json(path, &detections_to_records(dets))
}

pub fn read_ground_truth(path: &Path, format: BoxFormat) -> Result<ImageMap<GroundTruthBox>> {
    let records: Vec<GroundTruthRecord> = read_json(path)?;
    records_to_ground_truth(&records, format)
}

pub fn write_ground_truth(path: &Path, gts: &ImageMap<GroundTruthBox>) -> Result<()> {
    write_json(path, &ground_truth_to_records(gts))
}

/// Writes a CSV with the given header and rows.
pub fn write_csv<R: AsRef<[String]>>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(header).map_err(csv_err)?;
        for r in rows {
            csv.write_record(r.as_ref()).map_err(csv_err)?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format {
        kind: "CSV",
        reason: e.to_string(),
    }
}

/// One `metric,threshold,value` row; metrics without a threshold leave it empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub threshold: Option<f64>,
    pub value: f64,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, threshold: Option<f64>, value: f64) -> Self {
        Self {
            metric: metric.into(),
            threshold,
            value,
        }
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.metric.clone(),
            self.threshold.map(|t| t.to_string()).unwrap_or_default(),
            self.value.to_string(),
        ]
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let cells: Vec<Vec<String>> = rows.iter().map(MetricRow::cells).collect();
    write_csv(path, &["metric", "threshold", "value"], &cells)
}

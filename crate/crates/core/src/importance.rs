//! Participant annotations and the importance maps aggregated from them.

use std::io::Cursor;

use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridMode, GridSpec};
use crate::raster::BinaryMask;

pub const DEFAULT_POINT_SIGMA: f64 = 32.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Click,
    Move,
    ToggleOn,
    ToggleOff,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub t_ms: i64,
    pub kind: EventKind,
    pub x: i64,
    pub y: i64,
}

/// One participant's block selection for one stimulus, with interaction telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub participant_id: String,
    pub stimulus_id: String,
    pub grid_mode: GridMode,
    pub selected_block_ids: Vec<String>,
    pub duration_ms: i64,
    pub click_count: i64,
    pub mouse_travel_px: f64,
    pub events: Vec<InteractionEvent>,
}

impl Annotation {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Block ids not present in `spec`, in submission order.
    pub fn unknown_blocks(&self, spec: &GridSpec) -> Vec<String> {
        let known = spec.index_by_id();
        self.selected_block_ids
            .iter()
            .filter(|id| !known.contains_key(id.as_str()))
            .cloned()
            .collect()
    }
}

/// Row-major scalar field with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl ImportanceMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::Input(format!(
                "importance map has {} values, expected {}x{}",
                values.len(),
                width,
                height
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("importance value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            values: mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ImportanceMap = serde_json::from_str(s)?;
        Self::new(raw.width, raw.height, raw.values)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("map serializes")
    }

    /// Grayscale PNG with each value scaled to `round(v * 255)`.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let data = self
            .values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = GrayImage::from_raw(self.width, self.height, data)
            .expect("map buffer matches its dimensions");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Decode(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Reads a grayscale (or colour, via luminance) PNG as `v / 255`.
    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let gray = crate::raster::Raster::decode_png(bytes)?.to_grayscale();
        Ok(Self {
            width: gray.width(),
            height: gray.height(),
            values: gray.data().iter().map(|&v| v as f64 / 255.0).collect(),
        })
    }
}

/// Pixels covered by the annotation's selected blocks.
pub fn annotation_mask(ann: &Annotation, spec: &GridSpec) -> Result<BinaryMask> {
    if ann.stimulus_id != spec.stimulus_id {
        return Err(Error::DataIntegrity(format!(
            "annotation by `{}` is for stimulus `{}`, grid spec is for `{}`",
            ann.participant_id, ann.stimulus_id, spec.stimulus_id
        )));
    }
    let index = spec.index_by_id();
    let (w, h) = spec.dimensions();
    let mut mask = BinaryMask::new(w, h);
    for id in &ann.selected_block_ids {
        let b = index
            .get(id.as_str())
            .ok_or_else(|| Error::UnknownBlock(id.clone()))?;
        mask.fill_rect(b.x, b.y, b.w, b.h);
    }
    Ok(mask)
}

/// Per-pixel mean of the participants' selection masks.
pub fn aggregate(annotations: &[Annotation], spec: &GridSpec) -> Result<ImportanceMap> {
    let masks = annotations
        .iter()
        .map(|a| annotation_mask(a, spec))
        .collect::<Result<Vec<_>>>()?;
    aggregate_masks(&masks)
}

pub(crate) fn aggregate_masks(masks: &[BinaryMask]) -> Result<ImportanceMap> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Input("cannot aggregate an empty annotation list".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut counts = vec![0u32; w as usize * h as usize];
    for m in masks {
        if (m.width(), m.height()) != (w, h) {
            return Err(Error::Input("annotation masks differ in size".into()));
        }
        for (c, &b) in counts.iter_mut().zip(m.bits()) {
            *c += b as u32;
        }
    }
    let p = masks.len() as f64;
    Ok(ImportanceMap {
        width: w,
        height: h,
        values: counts.iter().map(|&c| c as f64 / p).collect(),
    })
}

/// Checks that every annotation targets the same stimulus.
pub fn common_stimulus(annotations: &[Annotation]) -> Result<&str> {
    let first = annotations
        .first()
        .ok_or_else(|| Error::Input("no annotations supplied".into()))?;
    if let Some(other) = annotations
        .iter()
        .find(|a| a.stimulus_id != first.stimulus_id)
    {
        return Err(Error::Input(format!(
            "annotations mix stimuli `{}` and `{}`",
            first.stimulus_id, other.stimulus_id
        )));
    }
    Ok(&first.stimulus_id)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointClick {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub t_ms: i64,
}

/// Click-based annotation from a point tool (BubbleView-style exports).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointAnnotation {
    pub participant_id: String,
    pub stimulus_id: String,
    pub clicks: Vec<PointClick>,
}

/// Sum of isotropic Gaussians (truncated at 3 sigma) at each click,
/// normalized so the maximum is 1. No clicks gives an all-zero map.
pub fn render_points(ann: &PointAnnotation, width: u32, height: u32, sigma: f64) -> Result<ImportanceMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Input(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let mut acc = vec![0.0f64; width as usize * height as usize];
    let reach = 3.0 * sigma;
    let two_s2 = 2.0 * sigma * sigma;
    for click in &ann.clicks {
        let x0 = (click.x - reach).floor().max(0.0) as u32;
        let y0 = (click.y - reach).floor().max(0.0) as u32;
        let x1 = ((click.x + reach).ceil().max(0.0) as u32).min(width.saturating_sub(1));
        let y1 = ((click.y + reach).ceil().max(0.0) as u32).min(height.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - click.x).powi(2) + (y as f64 - click.y).powi(2);
                if d2 <= reach * reach {
                    acc[y as usize * width as usize + x as usize] += (-d2 / two_s2).exp();
                }
            }
        }
    }
    let max = acc.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        acc.iter_mut().for_each(|v| *v = (*v / max).min(1.0));
    }
    Ok(ImportanceMap {
        width,
        height,
        values: acc,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryStats {
    pub click_count: u64,
    pub mouse_travel_px: f64,
    pub annotated_area_px: u64,
    pub area_per_travel: f64,
}

/// Interaction summary. With events present, clicks are the `click` and
/// toggle events and travel is the path length through the `move` events;
/// otherwise the stored summary fields are used.
pub fn telemetry_stats(ann: &Annotation, spec: &GridSpec) -> Result<TelemetryStats> {
    let (click_count, mouse_travel_px) = if ann.events.is_empty() {
        (ann.click_count.max(0) as u64, ann.mouse_travel_px.max(0.0))
    } else {
        recompute_telemetry(&ann.events)
    };
    let annotated_area_px = annotation_mask(ann, spec)?.count_ones() as u64;
    Ok(TelemetryStats {
        click_count,
        mouse_travel_px,
        annotated_area_px,
        area_per_travel: annotated_area_px as f64 / mouse_travel_px.max(1.0),
    })
}

/// `(click_count, mouse_travel_px)` derived from an event stream.
pub fn recompute_telemetry(events: &[InteractionEvent]) -> (u64, f64) {
    let clicks = events
        .iter()
        .filter(|e| e.kind != EventKind::Move)
        .count() as u64;
    let travel = events
        .iter()
        .filter(|e| e.kind == EventKind::Move)
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| ((w[1].x - w[0].x) as f64).hypot((w[1].y - w[0].y) as f64))
        .sum();
    (clicks, travel)
}

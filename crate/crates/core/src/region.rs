//! Region labelling over the tile lattice, and the static grid baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, MIN_TILE_SIZE};
use crate::grid::{Block, GridMode, GridSpec, RegionLabel};
use crate::optimizer::BinaryGrid;
use crate::raster::BinaryMask;

pub const DEFAULT_TILE_SIZE: u32 = 32;
pub const DEFAULT_STATIC_N: u32 = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextSource {
    #[default]
    External,
    Heuristic,
}

/// Axis-aligned text bounding box in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    #[serde(default, skip_serializing)]
    pub source: TextSource,
}

impl TextBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64, source: TextSource) -> Self {
        Self { x, y, w, h, source }
    }

    /// Intersection with the image rectangle as `(x0, y0, x1, y1)` (exclusive),
    /// or `None` when nothing of the box remains.
    pub fn clamp(&self, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = (self.x + self.w).min(width as i64);
        let y1 = (self.y + self.h).min(height as i64);
        (x1 > x0 && y1 > y0).then(|| (x0 as u32, y0 as u32, x1 as u32, y1 as u32))
    }

    /// Parses the sidecar format `[{"x":..,"y":..,"w":..,"h":..}]`.
    pub fn parse_sidecar(json: &str) -> Result<Vec<TextBox>> {
        let boxes: Vec<TextBox> = serde_json::from_str(json)?;
        if let Some(b) = boxes.iter().find(|b| b.w < 1 || b.h < 1) {
            return Err(Error::Input(format!(
                "text box at ({}, {}) has non-positive size {}x{}",
                b.x, b.y, b.w, b.h
            )));
        }
        Ok(boxes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelParams {
    /// Edge pixels a tile needs before it is labelled [`RegionLabel::Edge`].
    pub min_edge_pixels: u32,
}

impl Default for LabelParams {
    fn default() -> Self {
        Self { min_edge_pixels: 1 }
    }
}

/// The `rows x cols` tile lattice over an image, one label per tile.
///
/// The last row and column absorb the remainder pixels when the image size
/// is not a multiple of the tile size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileGrid {
    rows: u32,
    cols: u32,
    tile_size: u32,
    image_w: u32,
    image_h: u32,
    labels: Vec<RegionLabel>,
}

/// Lattice dimensions for an image, enforcing the tile size preconditions.
pub fn lattice_dims(width: u32, height: u32, tile_size: u32) -> Result<(u32, u32)> {
    if width < MIN_TILE_SIZE || height < MIN_TILE_SIZE {
        return Err(Error::ImageTooSmall { width, height });
    }
    if tile_size < MIN_TILE_SIZE {
        return Err(Error::Input(format!(
            "tile size {tile_size} is below the minimum of {MIN_TILE_SIZE}"
        )));
    }
    let (rows, cols) = (height / tile_size, width / tile_size);
    if rows == 0 || cols == 0 {
        return Err(Error::TileSize {
            tile_size,
            width,
            height,
            max: width.min(height),
        });
    }
    Ok((rows, cols))
}

impl TileGrid {
    pub fn new(
        image_w: u32,
        image_h: u32,
        tile_size: u32,
        labels: Vec<RegionLabel>,
    ) -> Result<Self> {
        let (rows, cols) = lattice_dims(image_w, image_h, tile_size)?;
        if labels.len() != (rows * cols) as usize {
            return Err(Error::Input(format!(
                "{} labels supplied for a {rows}x{cols} lattice",
                labels.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            tile_size,
            image_w,
            image_h,
            labels,
        })
    }

    pub fn uniform(image_w: u32, image_h: u32, tile_size: u32, label: RegionLabel) -> Result<Self> {
        let (rows, cols) = lattice_dims(image_w, image_h, tile_size)?;
        Self::new(image_w, image_h, tile_size, vec![label; (rows * cols) as usize])
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn tile_size(&self) -> u32 {
        self.tile_size
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.image_w, self.image_h)
    }

    pub fn label(&self, row: u32, col: u32) -> RegionLabel {
        self.labels[(row * self.cols + col) as usize]
    }

    pub fn set_label(&mut self, row: u32, col: u32, label: RegionLabel) {
        self.labels[(row * self.cols + col) as usize] = label;
    }

    pub fn labels(&self) -> &[RegionLabel] {
        &self.labels
    }

    pub fn count(&self, label: RegionLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// The binary occupancy grid of one region.
    pub fn region_grid(&self, label: RegionLabel) -> BinaryGrid {
        BinaryGrid::from_fn(self.rows, self.cols, |r, c| self.label(r, c) == label)
    }

    /// Pixel span `[start, end)` of tile column `col`.
    pub fn col_span(&self, col: u32) -> (u32, u32) {
        span(col, self.cols, self.tile_size, self.image_w)
    }

    /// Pixel span `[start, end)` of tile row `row`.
    pub fn row_span(&self, row: u32) -> (u32, u32) {
        span(row, self.rows, self.tile_size, self.image_h)
    }

    fn tile_of(&self, px: u32, n: u32) -> u32 {
        (px / self.tile_size).min(n - 1)
    }
}

fn span(index: u32, count: u32, t: u32, extent: u32) -> (u32, u32) {
    let start = index * t;
    let end = if index + 1 == count { extent } else { start + t };
    (start, end)
}

/// Labels every tile: Text when its footprint intersects a text box, else
/// Edge when it holds at least `min_edge_pixels` edge pixels, else Background.
pub fn label_tiles(
    edges: &BinaryMask,
    text: &[TextBox],
    tile_size: u32,
    params: &LabelParams,
) -> Result<TileGrid> {
    let (w, h) = (edges.width(), edges.height());
    let mut grid = TileGrid::uniform(w, h, tile_size, RegionLabel::Background)?;

    let mut edge_counts = vec![0u32; (grid.rows * grid.cols) as usize];
    for y in 0..h {
        let r = grid.tile_of(y, grid.rows);
        for x in 0..w {
            if edges.get(x, y) {
                let c = grid.tile_of(x, grid.cols);
                edge_counts[(r * grid.cols + c) as usize] += 1;
            }
        }
    }
    let threshold = params.min_edge_pixels.max(1);
    for (label, &n) in grid.labels.iter_mut().zip(&edge_counts) {
        if n >= threshold {
            *label = RegionLabel::Edge;
        }
    }

    for tb in text {
        let Some((x0, y0, x1, y1)) = tb.clamp(w, h) else {
            continue;
        };
        let (r0, r1) = (grid.tile_of(y0, grid.rows), grid.tile_of(y1 - 1, grid.rows));
        let (c0, c1) = (grid.tile_of(x0, grid.cols), grid.tile_of(x1 - 1, grid.cols));
        for r in r0..=r1 {
            for c in c0..=c1 {
                grid.set_label(r, c, RegionLabel::Text);
            }
        }
    }
    Ok(grid)
}

/// Uniform `n x n` partition; block `(i, j)` spans pixel rows
/// `[floor(i h / n), floor((i + 1) h / n))` and likewise for columns.
pub fn static_grid(stimulus_id: &str, width: u32, height: u32, n: u32) -> Result<GridSpec> {
    if n == 0 || n > width.min(height) {
        return Err(Error::Input(format!(
            "static grid size {n} must lie in 1..={} for a {width}x{height} image",
            width.min(height)
        )));
    }
    let cut = |i: u32, extent: u32| (i as u64 * extent as u64 / n as u64) as u32;
    let mut blocks = Vec::with_capacity((n * n) as usize);
    for i in 0..n {
        let (y0, y1) = (cut(i, height), cut(i + 1, height));
        for j in 0..n {
            let (x0, x1) = (cut(j, width), cut(j + 1, width));
            blocks.push(Block {
                id: format!("s-{i}-{j}"),
                x: x0,
                y: y0,
                w: x1 - x0,
                h: y1 - y0,
                region: RegionLabel::Background,
                tiles: None,
            });
        }
    }
    Ok(GridSpec {
        stimulus_id: stimulus_id.to_string(),
        mode: GridMode::Static,
        tile_size: None,
        static_n: Some(n),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with(w: u32, h: u32, pts: &[(u32, u32)]) -> BinaryMask {
        let mut m = BinaryMask::new(w, h);
        for &(x, y) in pts {
            m.set(x, y, true);
        }
        m
    }

    #[test]
    fn blank_image_all_background() {
        let g = label_tiles(&BinaryMask::new(256, 256), &[], 32, &LabelParams::default()).unwrap();
        assert_eq!((g.rows(), g.cols()), (8, 8));
        assert_eq!(g.count(RegionLabel::Background), 64);
    }

    #[test]
    fn single_edge_pixel_tile() {
        let g = label_tiles(&mask_with(256, 256, &[(40, 40)]), &[], 32, &LabelParams::default())
            .unwrap();
        assert_eq!(g.count(RegionLabel::Edge), 1);
        assert_eq!(g.label(1, 1), RegionLabel::Edge);
    }

    #[test]
    fn text_takes_precedence_over_edges() {
        let edges = mask_with(128, 128, &[(5, 5), (40, 40)]);
        let text = [TextBox::new(0, 0, 10, 10, TextSource::External)];
        let g = label_tiles(&edges, &text, 32, &LabelParams::default()).unwrap();
        assert_eq!(g.label(0, 0), RegionLabel::Text);
        assert_eq!(g.label(1, 1), RegionLabel::Edge);
        assert_eq!(g.count(RegionLabel::Text), 1);
    }

    #[test]
    fn remainder_pixels_belong_to_last_tile() {
        // 70 px wide at t=32: two columns, the second spanning 32..70.
        let g = label_tiles(&mask_with(70, 40, &[(69, 39)]), &[], 32, &LabelParams::default())
            .unwrap();
        assert_eq!((g.rows(), g.cols()), (1, 2));
        assert_eq!(g.col_span(1), (32, 70));
        assert_eq!(g.label(0, 1), RegionLabel::Edge);
    }

    #[test]
    fn edge_threshold_is_configurable() {
        let edges = mask_with(64, 64, &[(1, 1), (2, 2), (40, 40)]);
        let g = label_tiles(&edges, &[], 32, &LabelParams { min_edge_pixels: 2 }).unwrap();
        assert_eq!(g.label(0, 0), RegionLabel::Edge);
        assert_eq!(g.label(1, 1), RegionLabel::Background);
    }

    #[test]
    fn oversized_tile_names_usable_range() {
        let err = label_tiles(&BinaryMask::new(10, 10), &[], 32, &LabelParams::default())
            .unwrap_err();
        assert!(matches!(err, Error::TileSize { max: 10, .. }));
        let msg = err.to_string();
        assert!(msg.contains("8..=10"), "{msg}");
        assert!(matches!(
            lattice_dims(4, 100, 8),
            Err(Error::ImageTooSmall { .. })
        ));
        assert!(lattice_dims(64, 64, 4).is_err());
    }

    #[test]
    fn text_boxes_are_clamped() {
        let tb = TextBox::new(-5, 90, 20, 20, TextSource::External);
        assert_eq!(tb.clamp(100, 100), Some((0, 90, 15, 100)));
        assert_eq!(TextBox::new(200, 0, 5, 5, TextSource::External).clamp(100, 100), None);
    }

    #[test]
    fn sidecar_parsing() {
        let boxes = TextBox::parse_sidecar(r#"[{"x":1,"y":2,"w":30,"h":10}]"#).unwrap();
        assert_eq!(boxes, vec![TextBox::new(1, 2, 30, 10, TextSource::External)]);
        assert!(TextBox::parse_sidecar(r#"[{"x":1,"y":2,"w":0,"h":10}]"#).is_err());
    }

    #[test]
    fn static_grid_paper_setting() {
        let spec = static_grid("s", 256, 256, 8).unwrap();
        assert_eq!(spec.blocks.len(), 64);
        assert!(spec.blocks.iter().all(|b| b.w == 32 && b.h == 32));
        spec.validate_cover(256, 256).unwrap();
    }

    #[test]
    fn static_grid_single_block() {
        let spec = static_grid("s", 123, 45, 1).unwrap();
        assert_eq!(spec.blocks.len(), 1);
        assert_eq!((spec.blocks[0].w, spec.blocks[0].h), (123, 45));
    }

    #[test]
    fn static_grid_uneven_extent() {
        let spec = static_grid("s", 257, 257, 8).unwrap();
        assert_eq!(spec.blocks.len(), 64);
        let row0: u32 = spec.blocks[..8].iter().map(|b| b.w).sum();
        assert_eq!(row0, 257);
        assert_eq!(spec.blocks[7].w, 33);
        assert_eq!(spec.blocks[63].h, 33);
        assert!(spec.blocks[..7].iter().all(|b| b.w == 32));
        spec.validate_cover(257, 257).unwrap();
    }

    #[test]
    fn static_grid_range() {
        assert!(static_grid("s", 10, 20, 0).is_err());
        assert!(static_grid("s", 10, 20, 11).is_err());
        assert!(static_grid("s", 10, 20, 10).is_ok());
    }
}

//! Image-to-grids pipeline shared by the CLI and the service.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::canny::{canny_edges, CannyParams};
use crate::error::Result;
use crate::grid::GridSpec;
use crate::optimizer::{adaptive_grid, AdaptiveGrid, SolverOptions};
use crate::raster::{BinaryMask, Raster};
use crate::region::{
    label_tiles, static_grid, LabelParams, TextBox, TileGrid, DEFAULT_STATIC_N, DEFAULT_TILE_SIZE,
};
use crate::text::{detect_text_heuristic, TextHeuristicParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineParams {
    pub tile_size: u32,
    pub static_n: u32,
    pub canny: CannyParams,
    pub labels: LabelParams,
    pub text: TextHeuristicParams,
    pub solver: SolverOptions,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            static_n: DEFAULT_STATIC_N,
            canny: CannyParams::default(),
            labels: LabelParams::default(),
            text: TextHeuristicParams::default(),
            solver: SolverOptions::default(),
        }
    }
}

/// Everything the pipeline derives from one stimulus.
#[derive(Clone, Debug)]
pub struct GridBuild {
    pub edges: BinaryMask,
    pub text_boxes: Vec<TextBox>,
    pub tiles: TileGrid,
    pub static_spec: GridSpec,
    pub adaptive: AdaptiveGrid,
}

#[derive(Serialize)]
struct IdInputs<'a> {
    tile_size: u32,
    static_n: u32,
    low: f64,
    high: f64,
    sigma: f64,
    min_edge_pixels: u32,
    max_block_w: Option<u32>,
    max_block_h: Option<u32>,
    text_boxes: Option<&'a [TextBox]>,
}

/// Content-derived stimulus id: a SHA-256 prefix over the image bytes and
/// every parameter that shapes the grids (the solver budget excluded).
pub fn stimulus_id(image_bytes: &[u8], params: &PipelineParams, text_boxes: Option<&[TextBox]>) -> String {
    let inputs = IdInputs {
        tile_size: params.tile_size,
        static_n: params.static_n,
        low: params.canny.low_threshold,
        high: params.canny.high_threshold,
        sigma: params.canny.blur_sigma,
        min_edge_pixels: params.labels.min_edge_pixels,
        max_block_w: params.solver.max_block_w,
        max_block_h: params.solver.max_block_h,
        text_boxes,
    };
    let mut h = Sha256::new();
    h.update(image_bytes);
    h.update([0u8]);
    h.update(serde_json::to_vec(&inputs).expect("id inputs serialize"));
    let digest = h.finalize();
    format!("stim-{}", hex::encode(&digest[..8]))
}

/// Runs edge detection, text detection (unless boxes are supplied), tile
/// labelling, and both grid generators.
pub fn build_grids(
    stimulus_id: &str,
    image: &Raster,
    text_boxes: Option<Vec<TextBox>>,
    params: &PipelineParams,
) -> Result<GridBuild> {
    let edges = canny_edges(&image.to_grayscale(), &params.canny)?;
    let text_boxes = match text_boxes {
        Some(boxes) => boxes,
        None => detect_text_heuristic(&edges, &params.text),
    };
    let tiles = label_tiles(&edges, &text_boxes, params.tile_size, &params.labels)?;
    let static_spec = static_grid(stimulus_id, image.width(), image.height(), params.static_n)?;
    let adaptive = adaptive_grid(stimulus_id, &tiles, &params.solver);
    static_spec.validate_cover(image.width(), image.height())?;
    adaptive.spec.validate_cover(image.width(), image.height())?;
    Ok(GridBuild {
        edges,
        text_boxes,
        tiles,
        static_spec,
        adaptive,
    })
}

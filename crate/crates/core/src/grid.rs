//! Grid specifications: the pixel-space blocks served to annotators.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionLabel {
    Text,
    Edge,
    Background,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 3] = [RegionLabel::Text, RegionLabel::Edge, RegionLabel::Background];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::Text => "text",
            RegionLabel::Edge => "edge",
            RegionLabel::Background => "background",
        }
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    Static,
    Adaptive,
}

impl GridMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GridMode::Static => "static",
            GridMode::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for GridMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GridMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(GridMode::Static),
            "adaptive" => Ok(GridMode::Adaptive),
            other => Err(Error::Input(format!(
                "unknown grid mode `{other}`; expected `static` or `adaptive`"
            ))),
        }
    }
}

/// Rectangle in tile units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileRect {
    pub row: u32,
    pub col: u32,
    pub w: u32,
    pub h: u32,
}

impl TileRect {
    pub fn area(&self) -> u32 {
        self.w * self.h
    }

    pub fn contains(&self, row: u32, col: u32) -> bool {
        row >= self.row && row < self.row + self.h && col >= self.col && col < self.col + self.w
    }
}

/// One clickable patch. `x`, `y`, `w`, `h` are pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: String,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub region: RegionLabel,
    /// Tile footprint for adaptive blocks; not part of the wire format.
    #[serde(skip)]
    pub tiles: Option<TileRect>,
}

impl Block {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub stimulus_id: String,
    pub mode: GridMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_n: Option<u32>,
    pub blocks: Vec<Block>,
}

impl GridSpec {
    /// Image extent implied by the blocks (the right-most and bottom-most edges).
    pub fn dimensions(&self) -> (u32, u32) {
        self.blocks.iter().fold((0, 0), |(w, h), b| {
            (w.max(b.x + b.w), h.max(b.y + b.h))
        })
    }

    pub fn block(&self, id: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn index_by_id(&self) -> HashMap<&str, &Block> {
        self.blocks.iter().map(|b| (b.id.as_str(), b)).collect()
    }

    /// Checks that block ids are unique and that the blocks tile the
    /// `width` x `height` rectangle with every pixel covered exactly once.
    pub fn validate_cover(&self, width: u32, height: u32) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::DataIntegrity(format!(
                "grid spec for `{}` has no blocks",
                self.stimulus_id
            )));
        }
        let mut seen = HashMap::new();
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(prev) = seen.insert(b.id.as_str(), i) {
                return Err(Error::DataIntegrity(format!(
                    "duplicate block id `{}` at positions {prev} and {i}",
                    b.id
                )));
            }
            if b.w == 0 || b.h == 0 || b.x + b.w > width || b.y + b.h > height {
                return Err(Error::DataIntegrity(format!(
                    "block `{}` ({},{} {}x{}) lies outside the {width}x{height} image",
                    b.id, b.x, b.y, b.w, b.h
                )));
            }
        }
        let total: u64 = self.blocks.iter().map(Block::area).sum();
        if total != width as u64 * height as u64 {
            return Err(Error::DataIntegrity(format!(
                "block areas sum to {total}, image has {} pixels",
                width as u64 * height as u64
            )));
        }
        // Areas match, so any double-covered pixel implies an uncovered one.
        let mut owner = vec![u32::MAX; width as usize * height as usize];
        for (i, b) in self.blocks.iter().enumerate() {
            for y in b.y..b.y + b.h {
                let row = y as usize * width as usize;
                for x in b.x..b.x + b.w {
                    let cell = &mut owner[row + x as usize];
                    if *cell != u32::MAX {
                        return Err(Error::DataIntegrity(format!(
                            "blocks `{}` and `{}` overlap at pixel ({x}, {y})",
                            self.blocks[*cell as usize].id, b.id
                        )));
                    }
                    *cell = i as u32;
                }
            }
        }
        if self.mode == GridMode::Static {
            if let Some(n) = self.static_n {
                if self.blocks.len() != (n * n) as usize {
                    return Err(Error::DataIntegrity(format!(
                        "static grid with n={n} has {} blocks",
                        self.blocks.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// [`validate_cover`](Self::validate_cover) against the spec's own extent.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.dimensions();
        self.validate_cover(w, h)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid spec serializes")
    }
}

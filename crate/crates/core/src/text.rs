//! Connected-component text detection over an edge mask.
//!
//! Stand-in for an OCR engine: glyph-sized edge components are merged along
//! horizontal runs, and runs that are wide relative to their height are
//! reported as text boxes.

use crate::raster::BinaryMask;
use crate::region::{TextBox, TextSource};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextHeuristicParams {
    pub min_height: u32,
    pub max_height: u32,
    pub min_fill: f64,
    pub max_fill: f64,
    /// Horizontal merge distance as a multiple of component height.
    pub merge_gap: f64,
    pub min_aspect: f64,
}

impl Default for TextHeuristicParams {
    fn default() -> Self {
        Self {
            min_height: 6,
            max_height: 40,
            min_fill: 0.05,
            max_fill: 0.9,
            merge_gap: 0.8,
            min_aspect: 1.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Bounds {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

impl Bounds {
    fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    fn union(&self, o: &Bounds) -> Bounds {
        Bounds {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
        }
    }

    fn vertical_overlap(&self, o: &Bounds) -> bool {
        self.y0 <= o.y1 && o.y0 <= self.y1
    }

    fn horizontal_gap(&self, o: &Bounds) -> i64 {
        if self.x1 < o.x0 {
            o.x0 as i64 - self.x1 as i64 - 1
        } else if o.x1 < self.x0 {
            self.x0 as i64 - o.x1 as i64 - 1
        } else {
            0
        }
    }
}

/// 8-connected components of the set pixels: bounding box and pixel count.
fn components(mask: &BinaryMask) -> Vec<(Bounds, usize)> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.bits();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (sx, sy) = ((start % w) as u32, (start / w) as u32);
        let mut b = Bounds { x0: sx, y0: sy, x1: sx, y1: sy };
        let mut count = 0;
        while let Some(i) = stack.pop() {
            count += 1;
            let (x, y) = (i % w, i / w);
            b.x0 = b.x0.min(x as u32);
            b.x1 = b.x1.max(x as u32);
            b.y0 = b.y0.min(y as u32);
            b.y1 = b.y1.max(y as u32);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push((b, count));
    }
    out
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

pub fn detect_text_heuristic(edges: &BinaryMask, params: &TextHeuristicParams) -> Vec<TextBox> {
    let mut glyphs: Vec<Bounds> = components(edges)
        .into_iter()
        .filter(|(b, count)| {
            let fill = *count as f64 / (b.width() as f64 * b.height() as f64);
            (params.min_height..=params.max_height).contains(&b.height())
                && (params.min_fill..=params.max_fill).contains(&fill)
        })
        .map(|(b, _)| b)
        .collect();
    glyphs.sort_by_key(|b| (b.x0, b.y0));

    let mut parent: Vec<usize> = (0..glyphs.len()).collect();
    for i in 0..glyphs.len() {
        for j in i + 1..glyphs.len() {
            let (a, b) = (&glyphs[i], &glyphs[j]);
            let reach = params.merge_gap * a.height().max(b.height()) as f64;
            // Sorted by left edge: once b starts beyond a's reach, so do the rest.
            if b.x0 as f64 > a.x1 as f64 + reach + 1.0 {
                break;
            }
            if a.vertical_overlap(b) && a.horizontal_gap(b) as f64 <= reach {
                let (ra, rb) = (find(&mut parent, i), find(&mut parent, j));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }

    let mut groups: Vec<Option<Bounds>> = vec![None; glyphs.len()];
    for i in 0..glyphs.len() {
        let root = find(&mut parent, i);
        groups[root] = Some(match groups[root] {
            Some(g) => g.union(&glyphs[i]),
            None => glyphs[i],
        });
    }
    let mut boxes: Vec<TextBox> = groups
        .into_iter()
        .flatten()
        .filter(|g| {
            g.height() <= params.max_height
                && g.width() as f64 / g.height() as f64 >= params.min_aspect
        })
        .map(|g| {
            TextBox::new(
                g.x0 as i64,
                g.y0 as i64,
                g.width() as i64,
                g.height() as i64,
                TextSource::Heuristic,
            )
        })
        .collect();
    boxes.sort_by_key(|b| (b.y, b.x));
    boxes
}

//! Small raster drawing kit and the bundled synthetic chart fixtures.

use crate::raster::Raster;

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];

/// Glyph rows for a 5x6 bitmap font; bit 4 is the leftmost column.
fn glyph(ch: char) -> [u8; 6] {
    match ch.to_ascii_uppercase() {
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001],
        'B' => [0b11110, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'C' => [0b01111, 0b10000, 0b10000, 0b10000, 0b10000, 0b01111],
        'D' => [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110],
        'E' => [0b11111, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'G' => [0b01111, 0b10000, 0b10011, 0b10001, 0b10001, 0b01111],
        'H' => [0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'I' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b11111],
        'J' => [0b00111, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        'K' => [0b10001, 0b10010, 0b11100, 0b10010, 0b10001, 0b10001],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'M' => [0b10001, 0b11011, 0b10101, 0b10001, 0b10001, 0b10001],
        'N' => [0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000],
        'Q' => [0b01110, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10010, 0b10001],
        'S' => [0b01111, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'W' => [0b10001, 0b10001, 0b10001, 0b10101, 0b11011, 0b10001],
        'X' => [0b10001, 0b01010, 0b00100, 0b00100, 0b01010, 0b10001],
        'Y' => [0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100],
        'Z' => [0b11111, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
        '0' => [0b01110, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11110, 0b00001, 0b00110, 0b00001, 0b00001, 0b11110],
        '4' => [0b00010, 0b00110, 0b01010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b11110],
        '6' => [0b01110, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b01111, 0b00001, 0b00001, 0b01110],
        '-' => [0, 0, 0b11111, 0, 0, 0],
        '.' => [0, 0, 0, 0, 0, 0b00100],
        _ => [0; 6],
    }
}

/// An opaque RGB drawing surface, initially white.
#[derive(Clone, Debug)]
pub struct Canvas {
    raster: Raster,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            raster: Raster::filled(width, height, &WHITE).expect("positive canvas size"),
        }
    }

    pub fn width(&self) -> u32 {
        self.raster.width()
    }

    pub fn height(&self) -> u32 {
        self.raster.height()
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }

    pub fn put(&mut self, x: i64, y: i64, color: Rgb) {
        if x >= 0 && y >= 0 && x < self.width() as i64 && y < self.height() as i64 {
            self.raster.pixel_mut(x as u32, y as u32).copy_from_slice(&color);
        }
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, color: Rgb) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, color);
            }
        }
    }

    pub fn stroke_rect(&mut self, x: i64, y: i64, w: i64, h: i64, thickness: i64, color: Rgb) {
        self.fill_rect(x, y, w, thickness, color);
        self.fill_rect(x, y + h - thickness, w, thickness, color);
        self.fill_rect(x, y, thickness, h, color);
        self.fill_rect(x + w - thickness, y, thickness, h, color);
    }

    /// Line segment drawn as a sequence of filled squares of side `thickness`.
    pub fn draw_line(&mut self, from: (i64, i64), to: (i64, i64), thickness: i64, color: Rgb) {
        let (dx, dy) = (to.0 - from.0, to.1 - from.1);
        let steps = dx.abs().max(dy.abs()).max(1);
        let half = thickness / 2;
        for s in 0..=steps {
            let x = from.0 + (dx * s + steps / 2 * dx.signum()) / steps;
            let y = from.1 + (dy * s + steps / 2 * dy.signum()) / steps;
            self.fill_rect(x - half, y - half, thickness, thickness, color);
        }
    }

    pub fn fill_circle(&mut self, cx: i64, cy: i64, r: i64, color: Rgb) {
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    self.put(x, y, color);
                }
            }
        }
    }

    /// Pie sector between angles `a0..a1` in degrees, clockwise from 12 o'clock.
    pub fn fill_sector(&mut self, cx: i64, cy: i64, r: i64, a0: f64, a1: f64, color: Rgb) {
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                let (fx, fy) = ((x - cx) as f64, (y - cy) as f64);
                if fx * fx + fy * fy > (r * r) as f64 {
                    continue;
                }
                let mut angle = fx.atan2(-fy).to_degrees();
                if angle < 0.0 {
                    angle += 360.0;
                }
                if angle >= a0 && angle < a1 {
                    self.put(x, y, color);
                }
            }
        }
    }

    /// Draws `text` with the built-in 5x6 font at integer `scale`, glyphs one
    /// pixel apart. Returns the text's pixel bounds `(x, y, w, h)`.
    pub fn draw_text(&mut self, x: i64, y: i64, text: &str, scale: i64, color: Rgb) -> (i64, i64, i64, i64) {
        let n = text.chars().count() as i64;
        let advance = 5 * scale + 1;
        for (k, ch) in text.chars().enumerate() {
            let gx = x + k as i64 * advance;
            for (row, bits) in glyph(ch).iter().enumerate() {
                for col in 0..5 {
                    if bits >> (4 - col) & 1 == 1 {
                        self.fill_rect(gx + col * scale, y + row as i64 * scale, scale, scale, color);
                    }
                }
            }
        }
        (x, y, n * advance - 1, 6 * scale)
    }
}

const PALETTE: [Rgb; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

pub const FIXTURE_WIDTH: u32 = 320;
pub const FIXTURE_HEIGHT: u32 = 256;

fn axes(c: &mut Canvas, title: &str) {
    c.draw_text(64, 10, title, 2, BLACK);
    c.draw_line((48, 40), (48, 216), 2, BLACK);
    c.draw_line((48, 216), (300, 216), 2, BLACK);
    for (k, label) in ["0", "10", "20", "30"].iter().enumerate() {
        c.draw_text(12, 210 - k as i64 * 56, label, 1, BLACK);
    }
}

pub fn bar_chart() -> Raster {
    let mut c = Canvas::new(FIXTURE_WIDTH, FIXTURE_HEIGHT);
    axes(&mut c, "SALES BY YEAR");
    let heights = [150, 90, 120, 60, 170];
    for (k, h) in heights.iter().enumerate() {
        let x = 64 + k as i64 * 48;
        c.fill_rect(x, 216 - h, 32, *h, PALETTE[0]);
        c.draw_text(x + 4, 226, &format!("{}", 2019 + k), 1, BLACK);
    }
    c.into_raster()
}

pub fn line_chart() -> Raster {
    let mut c = Canvas::new(FIXTURE_WIDTH, FIXTURE_HEIGHT);
    axes(&mut c, "PUBLIC TRUST");
    let ys = [80, 120, 100, 170, 150, 190, 130];
    for k in 0..ys.len() - 1 {
        let (x0, x1) = (60 + k as i64 * 38, 60 + (k + 1) as i64 * 38);
        c.draw_line((x0, ys[k]), (x1, ys[k + 1]), 3, PALETTE[3]);
    }
    c.draw_text(60, 226, "1990", 1, BLACK);
    c.draw_text(260, 226, "2020", 1, BLACK);
    c.into_raster()
}

pub fn pie_chart() -> Raster {
    let mut c = Canvas::new(FIXTURE_WIDTH, FIXTURE_HEIGHT);
    c.draw_text(90, 10, "MARKET SHARE", 2, BLACK);
    let cuts = [0.0, 110.0, 190.0, 260.0, 360.0];
    for k in 0..cuts.len() - 1 {
        c.fill_sector(160, 140, 90, cuts[k], cuts[k + 1], PALETTE[k]);
    }
    c.draw_text(262, 60, "A 30", 1, BLACK);
    c.draw_text(262, 200, "B 22", 1, BLACK);
    c.into_raster()
}

pub fn scatter_plot() -> Raster {
    let mut c = Canvas::new(FIXTURE_WIDTH, FIXTURE_HEIGHT);
    axes(&mut c, "HEIGHT VS AGE");
    let pts = [
        (70, 190), (90, 170), (110, 175), (130, 150), (150, 140),
        (170, 120), (190, 125), (210, 100), (230, 90), (250, 70), (270, 60),
    ];
    for &(x, y) in &pts {
        c.fill_circle(x, y, 4, PALETTE[1]);
    }
    c.into_raster()
}

pub fn heatmap() -> Raster {
    let mut c = Canvas::new(FIXTURE_WIDTH, FIXTURE_HEIGHT);
    c.draw_text(80, 10, "TEMPERATURE", 2, BLACK);
    let levels = [40u8, 90, 140, 190, 230];
    for r in 0..4 {
        for col in 0..6 {
            let v = levels[(r * 3 + col * 2) % levels.len()];
            c.fill_rect(40 + col as i64 * 40, 48 + r as i64 * 40, 40, 40, [255, v, 255 - v]);
        }
    }
    c.draw_text(40, 222, "JAN", 1, BLACK);
    c.draw_text(240, 222, "JUN", 1, BLACK);
    c.into_raster()
}

/// The five bundled synthetic charts, by name.
pub fn chart_fixtures() -> Vec<(&'static str, Raster)> {
    vec![
        ("bar", bar_chart()),
        ("line", line_chart()),
        ("pie", pie_chart()),
        ("scatter", scatter_plot()),
        ("heatmap", heatmap()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_bounds_match_drawn_pixels() {
        let mut c = Canvas::new(120, 40);
        let (x, y, w, h) = c.draw_text(5, 7, "HD", 2, BLACK);
        let gray = c.raster().to_grayscale();
        let dark: Vec<(u32, u32)> = (0..40)
            .flat_map(|yy| (0..120).map(move |xx| (xx, yy)))
            .filter(|&(xx, yy)| gray.pixel(xx, yy)[0] == 0)
            .collect();
        let min_x = dark.iter().map(|p| p.0).min().unwrap() as i64;
        let max_x = dark.iter().map(|p| p.0).max().unwrap() as i64;
        let min_y = dark.iter().map(|p| p.1).min().unwrap() as i64;
        let max_y = dark.iter().map(|p| p.1).max().unwrap() as i64;
        assert_eq!((min_x, min_y, max_x + 1 - min_x, max_y + 1 - min_y), (x, y, w, h));
    }

    #[test]
    fn fixtures_have_fixed_size() {
        for (name, r) in chart_fixtures() {
            assert_eq!((r.width(), r.height(), r.channels()), (FIXTURE_WIDTH, FIXTURE_HEIGHT, 3), "{name}");
        }
    }
}

//! Debug overlay PNGs and SVG convergence charts.

use std::fmt::Write;

use gridlab_core::{ConvergenceReport, GridSpec, Raster, RegionLabel};

fn region_color(label: RegionLabel) -> [u8; 3] {
    match label {
        RegionLabel::Text => [214, 39, 40],
        RegionLabel::Edge => [31, 119, 180],
        RegionLabel::Background => [44, 160, 44],
    }
}

/// The image washed out towards white with every block outlined in its
/// region's color.
pub fn overlay(image: &Raster, spec: &GridSpec) -> Raster {
    let (w, h) = (image.width(), image.height());
    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            let p = image.pixel(x, y);
            let rgb = match p.len() {
                1 => [p[0]; 3],
                3 => [p[0], p[1], p[2]],
                _ => {
                    let a = p[3] as u32;
                    let over = |c: u8| ((c as u32 * a + 255 * (255 - a)) / 255) as u8;
                    [over(p[0]), over(p[1]), over(p[2])]
                }
            };
            data.extend(rgb.map(|c| ((c as u32 + 2 * 255) / 3) as u8));
        }
    }
    let mut out = Raster::new(w, h, 3, data).expect("buffer matches dimensions");
    let thickness = 2.min(w).min(h);
    for block in &spec.blocks {
        let color = region_color(block.region);
        for y in block.y..block.y + block.h {
            for x in block.x..block.x + block.w {
                let edge = x < block.x + thickness
                    || y < block.y + thickness
                    || x + thickness >= block.x + block.w
                    || y + thickness >= block.y + block.h;
                if edge {
                    out.pixel_mut(x, y).copy_from_slice(&color);
                }
            }
        }
    }
    out
}

const PALETTE: [&str; 5] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];

/// Line chart of mean similarity against participant count, one series per
/// report, with the threshold as a dashed rule.
pub fn convergence_svg(reports: &[ConvergenceReport]) -> String {
    let (width, height) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 130.0, 30.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let max_n = reports.iter().map(|r| r.participants).max().unwrap_or(1).max(2);
    let sx = |n: f64| left + (n - 1.0) / (max_n as f64 - 1.0) * plot_w;
    let sy = |v: f64| top + (1.0 - v) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    if let Some(r) = reports.first() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="18" text-anchor="middle">{} ({} participants, {} orders)</text>"#,
            left + plot_w / 2.0,
            xml_escape(&r.stimulus_id),
            r.participants,
            r.orders
        );
    }
    // Axes and grid.
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"##,
            left + plot_w,
            left - 6.0,
            y + 4.0
        );
    }
    let step = (max_n as f64 / 10.0).ceil().max(1.0) as usize;
    for n in (1..=max_n).filter(|n| (n - 1) % step == 0 || *n == max_n) {
        let x = sx(n as f64);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{n}</text>"#,
            top + plot_h + 16.0
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">participants</text>"#,
        left + plot_w / 2.0,
        height - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">mean similarity</text>"#,
        top + plot_h / 2.0
    );
    if let Some(r) = reports.first() {
        let y = sy(r.threshold);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#555" stroke-dasharray="6 4"/>"##,
            left + plot_w
        );
    }
    for (k, r) in reports.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        // Undefined prefixes break the line.
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for p in &r.curve {
            match p.mean_similarity {
                Some(v) => segments.last_mut().expect("non-empty").push((sx(p.n as f64), sy(v))),
                None => segments.push(Vec::new()),
            }
        }
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        let ly = top + 14.0 + 20.0 * k as f64;
        let lx = left + plot_w + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            r.metric
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

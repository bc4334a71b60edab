use gridlab_core::fixtures::{chart_fixtures, Canvas, BLACK};
use gridlab_core::{
    canny_edges, label_tiles, static_grid, BinaryMask, CannyParams, LabelParams, Raster, RegionLabel, TextBox,
    TextSource,
};
use proptest::prelude::*;

fn gray(w: u32, h: u32, f: impl Fn(u32, u32) -> u8) -> Raster {
    let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
    Raster::new(w, h, 1, data).unwrap()
}

fn rotate180(r: &Raster) -> Raster {
    let (w, h) = (r.width(), r.height());
    gray(w, h, |x, y| r.pixel(w - 1 - x, h - 1 - y)[0])
}

fn edges(r: &Raster) -> BinaryMask {
    canny_edges(&r.to_grayscale(), &CannyParams::default()).unwrap()
}

/// Every set pixel of `a` has a set pixel of `b` within one pixel.
fn near_subset(a: &BinaryMask, b: &BinaryMask) -> bool {
    let (w, h) = (a.width() as i64, a.height() as i64);
    (0..h).all(|y| {
        (0..w).all(|x| {
            !a.get(x as u32, y as u32)
                || (-1..=1).any(|dy| {
                    (-1..=1).any(|dx| {
                        let (nx, ny) = (x + dx, y + dy);
                        nx >= 0 && ny >= 0 && nx < w && ny < h && b.get(nx as u32, ny as u32)
                    })
                })
        })
    })
}

fn shapes() -> Vec<Raster> {
    let mut out = Vec::new();
    let mut c = Canvas::new(64, 64);
    c.fill_rect(20, 24, 8, 8, BLACK);
    out.push(c.raster().to_grayscale());
    let mut c = Canvas::new(80, 60);
    c.fill_circle(40, 30, 17, [30, 90, 200]);
    out.push(c.raster().to_grayscale());
    let mut c = Canvas::new(96, 64);
    c.draw_line((5, 50), (90, 8), 3, BLACK);
    c.draw_text(10, 10, "AXIS 42", 2, BLACK);
    out.push(c.raster().to_grayscale());
    out
}

#[test]
fn rotation_by_half_turn_commutes_up_to_one_pixel() {
    for img in shapes() {
        let direct = edges(&img);
        let turned = edges(&rotate180(&img));
        let rotated_back = rotate180(&gray(img.width(), img.height(), |x, y| u8::from(turned.get(x, y)) * 255));
        let back = BinaryMask::from_bits(
            img.width(),
            img.height(),
            rotated_back.data().iter().map(|&v| v > 0).collect(),
        )
        .unwrap();
        assert!(!direct.is_empty());
        assert!(near_subset(&direct, &back) && near_subset(&back, &direct));
    }
}

#[test]
fn raising_thresholds_never_adds_edges() {
    let mut corpus: Vec<Raster> = chart_fixtures().into_iter().map(|(_, r)| r.to_grayscale()).collect();
    corpus.extend(shapes());
    let pairs = [(10.0, 30.0), (30.0, 90.0), (50.0, 150.0), (80.0, 150.0), (120.0, 240.0)];
    for img in &corpus {
        let masks: Vec<BinaryMask> = pairs
            .iter()
            .map(|&(low_threshold, high_threshold)| {
                let p = CannyParams {
                    low_threshold,
                    high_threshold,
                    ..Default::default()
                };
                canny_edges(img, &p).unwrap()
            })
            .collect();
        for pair in masks.windows(2) {
            let (lo, hi) = (&pair[0], &pair[1]);
            assert!(hi.bits().iter().zip(lo.bits()).all(|(&h, &l)| !h || l));
        }
    }
}

#[test]
fn small_square_gets_a_closed_loop() {
    let mut c = Canvas::new(64, 64);
    c.fill_rect(28, 28, 8, 8, BLACK);
    let mask = edges(c.raster());
    // Flood the non-edge pixels from the image corner (4-connected); a closed
    // loop keeps the fill out of the square.
    let mut reached = vec![false; 64 * 64];
    let mut stack = vec![(0u32, 0u32)];
    reached[0] = true;
    while let Some((x, y)) = stack.pop() {
        let nbrs = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
        for (nx, ny) in nbrs {
            if nx < 64 && ny < 64 && !mask.get(nx, ny) && !reached[(ny * 64 + nx) as usize] {
                reached[(ny * 64 + nx) as usize] = true;
                stack.push((nx, ny));
            }
        }
    }
    assert!(!reached[(32 * 64 + 32) as usize], "edge loop is open");
    // The loop hugs the square boundary.
    for y in 0..64 {
        for x in 0..64 {
            if mask.get(x, y) {
                let cheb = (x as f64 - 31.5).abs().max((y as f64 - 31.5).abs());
                assert!((2.5..=5.5).contains(&cheb), "edge at ({x},{y})");
            }
        }
    }
}

#[test]
fn step_edge_is_a_thin_band_at_the_boundary() {
    let img = gray(64, 64, |x, _| if x < 32 { 0 } else { 255 });
    let mask = edges(&img);
    for y in 0..64 {
        let cols: Vec<u32> = (0..64).filter(|&x| mask.get(x, y)).collect();
        assert!(!cols.is_empty() && cols.len() <= 2, "row {y}: {cols:?}");
        assert!(cols.iter().all(|&x| (30..=33).contains(&x)), "row {y}: {cols:?}");
    }
}

#[test]
fn canny_is_deterministic() {
    for (_, img) in chart_fixtures() {
        assert_eq!(edges(&img), edges(&img));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constant_images_have_no_edges(v in any::<u8>(), w in 1u32..40, h in 1u32..40,
                                     low in 0.0f64..255.0, span in 0.0f64..255.0, sigma in 0.0f64..3.0) {
        let p = CannyParams { low_threshold: low, high_threshold: (low + span).min(255.0), blur_sigma: sigma };
        prop_assert!(canny_edges(&gray(w, h, |_, _| v), &p).unwrap().is_empty());
    }

    #[test]
    fn labels_partition_the_lattice(
        (w, h, bits) in (8u32..120, 8u32..120).prop_flat_map(|(w, h)|
            (Just(w), Just(h), proptest::collection::vec(proptest::bool::weighted(0.02), (w * h) as usize))),
        t in 8u32..40,
        boxes in proptest::collection::vec((-20i64..130, -20i64..130, 1i64..50, 1i64..50), 0..4),
    ) {
        prop_assume!(t <= w.min(h));
        let mask = BinaryMask::from_bits(w, h, bits).unwrap();
        let text: Vec<TextBox> = boxes.iter().map(|&(x, y, bw, bh)| TextBox::new(x, y, bw, bh, TextSource::External)).collect();
        let grid = label_tiles(&mask, &text, t, &LabelParams::default()).unwrap();
        prop_assert_eq!((grid.rows(), grid.cols()), (h / t, w / t));
        let total: usize = RegionLabel::ALL.iter().map(|&l| grid.count(l)).sum();
        prop_assert_eq!(total, (grid.rows() * grid.cols()) as usize);
        let mut reversed = text.clone();
        reversed.reverse();
        prop_assert_eq!(&grid, &label_tiles(&mask, &reversed, t, &LabelParams::default()).unwrap());
        // Per-region grids are disjoint and cover the lattice.
        let regions: Vec<_> = RegionLabel::ALL.iter().map(|&l| grid.region_grid(l)).collect();
        for i in 0..grid.rows() * grid.cols() {
            let hits = regions.iter().filter(|g| g.cells()[i as usize]).count();
            prop_assert_eq!(hits, 1);
        }
    }

    #[test]
    fn empty_edge_mask_is_all_background_at_any_tile_size(w in 8u32..200, h in 8u32..200, t in 8u32..64) {
        prop_assume!(t <= w.min(h));
        let grid = label_tiles(&BinaryMask::new(w, h), &[], t, &LabelParams::default()).unwrap();
        prop_assert_eq!(grid.count(RegionLabel::Background), (grid.rows() * grid.cols()) as usize);
    }

    #[test]
    fn static_grid_tiles_the_image(w in 1u32..300, h in 1u32..300, n in 1u32..20) {
        prop_assume!(n <= w.min(h));
        let spec = static_grid("p", w, h, n).unwrap();
        prop_assert_eq!(spec.blocks.len() as u32, n * n);
        let area: u64 = spec.blocks.iter().map(|b| b.w as u64 * b.h as u64).sum();
        prop_assert_eq!(area, w as u64 * h as u64);
        let mut owner = vec![usize::MAX; (w * h) as usize];
        for (k, b) in spec.blocks.iter().enumerate() {
            for y in b.y..b.y + b.h {
                for x in b.x..b.x + b.w {
                    prop_assert_eq!(owner[(y * w + x) as usize], usize::MAX);
                    owner[(y * w + x) as usize] = k;
                }
            }
        }
        prop_assert!(owner.iter().all(|&o| o != usize::MAX));
    }
}

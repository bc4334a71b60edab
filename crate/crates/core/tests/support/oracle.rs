//! Brute-force minimum rectangle partition, independent of the solver.
//!
//! Memoized recursion over tile bitmasks: the lowest set tile must be covered
//! by some rectangle lying inside the remaining set, and every such rectangle
//! is tried.

use std::collections::HashMap;

pub struct Oracle {
    rects: Vec<u64>,
    memo: HashMap<u64, u32>,
}

impl Oracle {
    pub fn new(rows: u32, cols: u32) -> Self {
        assert!(rows * cols <= 64);
        let mut rects = Vec::new();
        for r0 in 0..rows {
            for r1 in r0..rows {
                for c0 in 0..cols {
                    for c1 in c0..cols {
                        let mut m = 0u64;
                        for r in r0..=r1 {
                            for c in c0..=c1 {
                                m |= 1 << (r * cols + c);
                            }
                        }
                        rects.push(m);
                    }
                }
            }
        }
        Self {
            rects,
            memo: HashMap::new(),
        }
    }

    pub fn min_blocks(&mut self, mask: u64) -> u32 {
        if mask == 0 {
            return 0;
        }
        if let Some(&v) = self.memo.get(&mask) {
            return v;
        }
        let low = mask & mask.wrapping_neg();
        let mut best = u32::MAX;
        for i in 0..self.rects.len() {
            let r = self.rects[i];
            if r & low != 0 && r & mask == r {
                best = best.min(1 + self.min_blocks(mask & !r));
            }
        }
        self.memo.insert(mask, best);
        best
    }
}

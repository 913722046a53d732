//! Peak heap use of the fused reduction, measured by a counting allocator.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use approxtopk_core::kernel::{partial_reduce, BlockLayout};
use approxtopk_core::recall::BinPlan;
use approxtopk_core::{DenseMatrix, Metric};

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = LIVE.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
            PEAK.fetch_max(now, Ordering::SeqCst);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        LIVE.fetch_sub(layout.size(), Ordering::SeqCst);
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

#[test]
fn reduction_never_materializes_scores() {
    let (m, n, d, w) = (64, 1 << 16, 16, 8);
    let x = DenseMatrix::new(n, d, (0..n * d).map(|v| (v % 97) as f32 * 0.01).collect()).unwrap();
    let q = DenseMatrix::new(m, d, (0..m * d).map(|v| (v % 13) as f32 * 0.1).collect()).unwrap();
    let plan = BinPlan::with_width_exp(n, 10, w).unwrap();
    let layout = BlockLayout::new(16, 256);

    let before = LIVE.load(Ordering::SeqCst);
    PEAK.store(before, Ordering::SeqCst);
    let c = partial_reduce(&q, &x, Metric::Mips, &plan, None, Some(layout)).unwrap();
    let peak = PEAK.load(Ordering::SeqCst) - before;

    let output = m * plan.num_bins * 8;
    let tiles = layout.working_set_bytes(d, plan.bin_width_exp);
    let score_matrix = m * n * 4;
    assert!(peak <= output + tiles, "peak {peak} > output {output} + tiles {tiles}");
    assert!(peak * 16 < score_matrix);
    drop(c);
}

//! Register-tiled scoring microkernel.
//!
//! A tile is `R` query rows against one packed panel of [`NR`] database rows.
//! Each accumulator lane performs `acc = acc + q[k] * x[k]` for ascending `k`
//! with no fused multiply-add, which is the exact rounding sequence of
//! [`crate::metric::dot`]. Wider vector units only change how many lanes run
//! at once, never the result.

use core::sync::atomic::{AtomicU8, Ordering};

/// Database rows per packed panel.
pub const NR: usize = 16;
/// Query rows per full tile.
pub const MR: usize = 4;

pub(crate) type Acc<const R: usize> = [[f32; NR]; R];

#[inline(always)]
fn tile_generic<const R: usize>(q: [&[f32]; R], panel: &[f32], acc: &mut Acc<R>) {
    let d = panel.len() / NR;
    let q: [&[f32]; R] = core::array::from_fn(|r| &q[r][..d]);
    let mut local = *acc;
    for (k, xs) in panel.chunks_exact(NR).enumerate() {
        let xs: &[f32; NR] = xs.try_into().unwrap();
        for r in 0..R {
            let a = q[r][k];
            for c in 0..NR {
                local[r][c] += a * xs[c];
            }
        }
    }
    *acc = local;
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::*;

    #[target_feature(enable = "avx512f")]
    pub(super) fn tile_avx512<const R: usize>(q: [&[f32]; R], panel: &[f32], acc: &mut Acc<R>) {
        tile_generic(q, panel, acc)
    }

    #[target_feature(enable = "avx2")]
    pub(super) fn tile_avx2<const R: usize>(q: [&[f32]; R], panel: &[f32], acc: &mut Acc<R>) {
        tile_generic(q, panel, acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Isa {
    Portable = 1,
    Avx2 = 2,
    Avx512 = 3,
}

static DETECTED: AtomicU8 = AtomicU8::new(0);

#[cfg(all(target_arch = "x86_64", feature = "std"))]
fn detect() -> Isa {
    if std::is_x86_feature_detected!("avx512f") {
        Isa::Avx512
    } else if std::is_x86_feature_detected!("avx2") {
        Isa::Avx2
    } else {
        Isa::Portable
    }
}

#[cfg(all(target_arch = "x86_64", not(feature = "std")))]
fn detect() -> Isa {
    if cfg!(target_feature = "avx512f") {
        Isa::Avx512
    } else if cfg!(target_feature = "avx2") {
        Isa::Avx2
    } else {
        Isa::Portable
    }
}

#[cfg(not(target_arch = "x86_64"))]
fn detect() -> Isa {
    Isa::Portable
}

/// Instruction set the tile routine dispatches to on this machine.
pub fn isa() -> Isa {
    match DETECTED.load(Ordering::Relaxed) {
        1 => Isa::Portable,
        2 => Isa::Avx2,
        3 => Isa::Avx512,
        _ => {
            let isa = detect();
            DETECTED.store(isa as u8, Ordering::Relaxed);
            isa
        }
    }
}

/// Forces a dispatch target; only narrowing to what the CPU supports is
/// meaningful. Used by tests to cross-check ISA paths.
pub fn force_isa(isa: Isa) {
    let supported = detect();
    let chosen = if (isa as u8) <= (supported as u8) { isa } else { supported };
    DETECTED.store(chosen as u8, Ordering::Relaxed);
}

#[inline]
pub(crate) fn tile<const R: usize>(q: [&[f32]; R], panel: &[f32], acc: &mut Acc<R>) {
    match isa() {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: `isa()` only reports features present on the running CPU.
        Isa::Avx512 => unsafe { x86::tile_avx512(q, panel, acc) },
        #[cfg(target_arch = "x86_64")]
        // SAFETY: as above.
        Isa::Avx2 => unsafe { x86::tile_avx2(q, panel, acc) },
        _ => tile_generic(q, panel, acc),
    }
}

/// Packs database rows `start..end` into panels of [`NR`] rows stored
/// coordinate-major (`panel[k * NR + c]` is coordinate `k` of row
/// `start + p * NR + c`). Lanes past `end` are zero.
pub(crate) fn pack_panels(x: &[f32], d: usize, start: usize, end: usize, buf: &mut [f32]) {
    let panel_len = d * NR;
    for (p, panel) in buf.chunks_exact_mut(panel_len).enumerate() {
        let base = start + p * NR;
        if base >= end {
            break;
        }
        for c in 0..NR {
            let j = base + c;
            if j < end {
                let row = &x[j * d..(j + 1) * d];
                for (k, &v) in row.iter().enumerate() {
                    panel[k * NR + c] = v;
                }
            } else {
                for k in 0..d {
                    panel[k * NR + c] = 0.0;
                }
            }
        }
    }
}

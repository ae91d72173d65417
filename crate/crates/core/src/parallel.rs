//! Switch between rayon-parallel and strictly sequential kernel execution.
//!
//! Every parallel kernel in this crate splits work into disjoint output chunks that are each
//! computed by the same sequential loop, so both modes produce bitwise-identical results.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force all kernels onto the calling thread.
pub fn set_sequential(on: bool) {
    SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_sequential() -> bool {
    SEQUENTIAL.load(Ordering::SeqCst)
}

// Below this many output elements the rayon overhead dominates.
const MIN_PARALLEL_LEN: usize = 4096;

pub(crate) fn for_each_chunk<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk == 0 || out.is_empty() {
        return;
    }
    if is_sequential() || out.len() < MIN_PARALLEL_LEN || out.len() == chunk {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

//! Allocator settings for training-heavy processes.

/// Keeps freed memory in the heap instead of returning it to the OS.
/// Training allocates and frees the same large activation buffers every
/// batch; with glibc's defaults each round trip costs fresh zeroed pages.
/// A no-op on other platforms.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator parameters and is called before
    // any threads are spawned by this crate.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        libc::mallopt(libc::M_TOP_PAD, 256 << 20);
    }
}

//! Links the system BLAS/LAPACK implementation (OpenBLAS) for ndarray-linalg.
//!
//! We deliberately avoid the `openblas-src` build helpers and resolve the
//! library through pkg-config, falling back to plain `-lopenblas`.

fn main() {
    if pkg_config::probe_library("openblas").is_ok() {
        return;
    }
    // Fall back to the conventional library name on the default search path.
    println!("cargo:rustc-link-lib=dylib=openblas");
}

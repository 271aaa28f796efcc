use std::env;
use std::path::Path;

/// The netlib backend links `-lcblas`, but Debian-family systems ship the
/// CBLAS interface inside libopenblas (or libgslcblas) without a
/// `libcblas.so` alias. Provide one in OUT_DIR when it is missing.
fn main() {
    let lib_dirs = [
        "/usr/lib/x86_64-linux-gnu",
        "/usr/lib/aarch64-linux-gnu",
        "/usr/lib",
        "/usr/local/lib",
    ];
    if lib_dirs.iter().any(|d| Path::new(d).join("libcblas.so").exists()) {
        return;
    }
    let Some(provider) = lib_dirs.iter().find_map(|d| {
        let p = Path::new(d).join("libopenblas.so");
        if p.exists() {
            return Some(p);
        }
        let p = Path::new(d).join("libgslcblas.so");
        p.exists().then_some(p)
    }) else {
        return;
    };
    let out_dir = env::var("OUT_DIR").unwrap();
    let shim = Path::new(&out_dir).join("libcblas.so");
    if !shim.exists() {
        #[cfg(unix)]
        std::os::unix::fs::symlink(&provider, &shim).ok();
    }
    println!("cargo:rustc-link-search=native={out_dir}");
}

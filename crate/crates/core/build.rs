use std::process::Command;

fn main() {
    // torch-sys exports the libtorch location it linked against; bake it in as an
    // rpath so tests, examples and the binary run without LD_LIBRARY_PATH.
    if let Ok(dir) = std::env::var("DEP_TCH_LIBTORCH_LIB") {
        println!("cargo:rustc-link-arg=-Wl,-rpath,{dir}");
    }

    let describe = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string());
    println!("cargo:rustc-env=LANDMARK_ADAPT_GIT_DESCRIBE={describe}");
    println!("cargo:rerun-if-changed=build.rs");
}

fn main() {
    // torch-sys exposes the libtorch directory through its `links = "tch"` metadata.
    if let Ok(dir) = std::env::var("DEP_TCH_LIBTORCH_LIB") {
        println!("cargo:rustc-link-arg=-Wl,-rpath,{dir}");
    }
}

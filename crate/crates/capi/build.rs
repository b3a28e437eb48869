fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let config = cbindgen::Config::from_file(format!("{crate_dir}/cbindgen.toml"))
        .expect("cbindgen.toml");
    match cbindgen::Builder::new().with_crate(&crate_dir).with_config(config).generate() {
        Ok(bindings) => {
            bindings.write_to_file(format!("{crate_dir}/include/gwloops.h"));
        }
        Err(e) => {
            // Keep the previously generated header usable when cbindgen
            // cannot parse mid-edit code.
            println!("cargo:warning=cbindgen failed: {e}");
        }
    }
}

fn main() {
    std::process::exit(csslab_core::run_cli());
}

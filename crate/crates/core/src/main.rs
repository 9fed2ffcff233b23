fn main() {
    std::process::exit(hierarchy_core::cli::run(std::env::args_os()));
}

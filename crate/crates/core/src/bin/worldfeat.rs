fn main() {
    std::process::exit(worldfeatures::cli::run_cli(std::env::args_os()));
}

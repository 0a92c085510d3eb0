fn main() {
    std::process::exit(coralgen::cli::run_from(std::env::args_os()));
}

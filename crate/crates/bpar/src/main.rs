fn main() {
    std::process::exit(bpar::cli::run_from(std::env::args_os()));
}

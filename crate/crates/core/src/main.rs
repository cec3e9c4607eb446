fn main() {
    std::process::exit(groundkit::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(emk::cli::run(std::env::args_os()));
}

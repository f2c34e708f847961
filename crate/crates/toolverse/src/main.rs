fn main() {
    std::process::exit(toolverse::cli::run(std::env::args_os()));
}

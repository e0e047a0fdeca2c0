fn main() {
    std::process::exit(green_cli::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(epibubble::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(margin_probe::cli::run(std::env::args_os()));
}

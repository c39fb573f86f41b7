fn main() {
    std::process::exit(elwqr_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(cocodesk_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(laykari_cli::run(std::env::args_os()));
}

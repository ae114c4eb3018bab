fn main() {
    std::process::exit(proxyrec_cli::run(std::env::args_os()));
}

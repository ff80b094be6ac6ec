fn main() {
    std::process::exit(lgcd_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(rgne_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(cardiosim_cli::run(std::env::args_os()));
}

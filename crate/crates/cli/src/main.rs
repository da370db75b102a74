fn main() {
    std::process::exit(mfred_cli::run(std::env::args_os()));
}

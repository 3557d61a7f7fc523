fn main() {
    std::process::exit(coevo::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(cmlm::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(nqm::cli::run(std::env::args_os()));
}

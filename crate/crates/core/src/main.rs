fn main() {
    std::process::exit(qconf::cli::run(std::env::args().collect()));
}

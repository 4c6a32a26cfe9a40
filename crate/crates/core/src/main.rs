fn main() {
    std::process::exit(supercon::cli::run(std::env::args()));
}

fn main() {
    std::process::exit(ctlab::cli::run());
}

fn main() {
    std::process::exit(saf::cli::run());
}

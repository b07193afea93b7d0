fn main() {
    std::process::exit(discogan::cli::run());
}

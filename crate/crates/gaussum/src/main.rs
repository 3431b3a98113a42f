fn main() {
    std::process::exit(gaussum::cli::run());
}

fn main() {
    std::process::exit(evoke::cli::run());
}

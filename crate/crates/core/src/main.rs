fn main() {
    std::process::exit(odflow::cli::run());
}

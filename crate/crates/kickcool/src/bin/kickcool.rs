fn main() {
    std::process::exit(kickcool::cli::run());
}

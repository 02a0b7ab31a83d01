fn main() {
    std::process::exit(ccopf::cli::run());
}

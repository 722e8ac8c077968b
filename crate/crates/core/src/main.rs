fn main() {
    std::process::exit(landa::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(icsrl::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(heisenvar::cli::run(std::env::args_os()));
}

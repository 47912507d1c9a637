fn main() {
    std::process::exit(breuer_major::cli::run(std::env::args_os()));
}

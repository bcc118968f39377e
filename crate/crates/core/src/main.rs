fn main() {
    std::process::exit(qlbgk::cli::run(std::env::args_os()));
}

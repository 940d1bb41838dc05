fn main() {
    std::process::exit(ouarea::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(ablr::cli::run(std::env::args_os()));
}

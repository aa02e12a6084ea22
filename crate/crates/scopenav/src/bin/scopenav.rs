fn main() {
    std::process::exit(scopenav::cli::run(std::env::args_os()));
}

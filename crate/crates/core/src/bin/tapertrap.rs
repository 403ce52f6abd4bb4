fn main() {
    std::process::exit(tapertrap::cli::run(std::env::args_os()));
}

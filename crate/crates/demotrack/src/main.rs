fn main() {
    std::process::exit(demotrack::cli::run(std::env::args_os()));
}

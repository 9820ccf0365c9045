fn main() {
    std::process::exit(scorevc::cli::run(std::env::args_os()));
}

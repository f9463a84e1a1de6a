fn main() {
    std::process::exit(polarmil::cli::run(std::env::args_os()));
}

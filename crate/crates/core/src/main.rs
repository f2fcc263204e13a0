fn main() {
    std::process::exit(expnote::cli::run(std::env::args_os()));
}

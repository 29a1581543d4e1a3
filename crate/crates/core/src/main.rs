fn main() {
    std::process::exit(otibsn::cli::run(std::env::args_os()));
}

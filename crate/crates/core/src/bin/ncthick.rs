fn main() {
    std::process::exit(ncthick::cli::run(std::env::args_os()));
}

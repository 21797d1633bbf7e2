fn main() {
    std::process::exit(gip::cli::run(std::env::args_os()));
}

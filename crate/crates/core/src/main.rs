fn main() {
    std::process::exit(hydrodeep::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(pandemon::cli::run(std::env::args_os()));
}

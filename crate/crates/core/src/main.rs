fn main() {
    std::process::exit(fewboost::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(vennpred::cli::run(std::env::args_os()));
}

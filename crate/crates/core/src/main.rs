fn main() {
    std::process::exit(oscnet::cli::run(std::env::args_os()));
}

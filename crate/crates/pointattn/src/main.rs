fn main() {
    std::process::exit(pointattn::cli::run(std::env::args_os()));
}

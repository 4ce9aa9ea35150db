fn main() {
    std::process::exit(p2l::cli::run(std::env::args_os()));
}

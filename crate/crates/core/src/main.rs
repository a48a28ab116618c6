fn main() {
    std::process::exit(sanmt::cli::run(std::env::args_os()));
}

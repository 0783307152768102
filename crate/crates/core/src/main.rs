fn main() {
    std::process::exit(lcdl::cli::run(std::env::args_os()));
}

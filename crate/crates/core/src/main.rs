fn main() {
    std::process::exit(dialnorm::cli::run(std::env::args_os()));
}

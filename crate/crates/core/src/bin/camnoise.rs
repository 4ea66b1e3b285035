fn main() {
    std::process::exit(camnoise::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(uwadv::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(npnet::cli::run(std::env::args_os()));
}

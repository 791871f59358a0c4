fn main() {
    std::process::exit(scenepref::cli::main_with(std::env::args().collect()));
}

fn main() {
    std::process::exit(pnkr::cli::main_with(std::env::args_os()));
}

fn main() {
    std::process::exit(uavfl::cli::main_with(std::env::args_os()));
}

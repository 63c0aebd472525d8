fn main() {
    std::process::exit(thermobreath_cli::run(std::env::args_os()));
}

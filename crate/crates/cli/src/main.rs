fn main() {
    std::process::exit(icsim_cli::run_from_env());
}

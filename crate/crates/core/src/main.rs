fn main() {
    std::process::exit(wfvar::cli::main_from_env());
}

fn main() {
    std::process::exit(vcgan::harness::cli::main_with_exit_code());
}

fn main() {
    std::process::exit(ae_noma::cli::main());
}

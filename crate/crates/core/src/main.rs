fn main() {
    std::process::exit(propulsion::cli::main());
}

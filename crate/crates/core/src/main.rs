fn main() {
    std::process::exit(edspec::cli::main());
}

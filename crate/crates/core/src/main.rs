fn main() {
    std::process::exit(maspob::cli::main());
}

fn main() {
    std::process::exit(ecos::cli::main());
}

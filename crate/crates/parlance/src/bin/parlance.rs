fn main() {
    // CLI wired up once the training stack exists.
    eprintln!("parlance: not yet wired");
    std::process::exit(2);
}

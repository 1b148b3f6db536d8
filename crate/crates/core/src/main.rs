fn main() {
    std::process::exit(netinvert::run());
}

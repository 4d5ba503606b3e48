fn main() {
    // CLI wiring lands with the harness module.
}

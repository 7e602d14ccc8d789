fn main() {
    std::process::exit(mfn_cli::run_main());
}

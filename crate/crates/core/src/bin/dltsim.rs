fn main() -> std::process::ExitCode {
    dltsim::cli::main()
}

fn main() -> std::process::ExitCode {
    failprob::cli::main()
}

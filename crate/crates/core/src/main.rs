fn main() -> std::process::ExitCode {
    photon_epr::cli::main()
}

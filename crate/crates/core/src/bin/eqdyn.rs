fn main() -> std::process::ExitCode {
    equity_dynamics::cli::main_entry()
}

fn main() -> std::process::ExitCode {
    focusflow::cli::main_entry()
}

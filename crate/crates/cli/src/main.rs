fn main() {
    std::process::exit(mrisde_cli::run_command(std::env::args_os()));
}

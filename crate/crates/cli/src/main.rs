fn main() {
    std::process::exit(analog_bptt_cli::main_with_args(std::env::args_os()));
}

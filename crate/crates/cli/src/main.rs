fn main() {
    std::process::exit(textgsl_cli::main_with_args(std::env::args_os()));
}

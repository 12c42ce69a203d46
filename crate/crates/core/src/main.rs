fn main() {
    llmslice::cli::init_logging();
    std::process::exit(llmslice::cli::main_with_args(std::env::args_os()));
}

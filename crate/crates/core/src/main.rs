fn main() {
    std::process::exit(fnmdp::cli::main_with_args(std::env::args_os()));
}

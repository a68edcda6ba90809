fn main() {
    std::process::exit(tracesynth_cli::run(std::env::args_os()));
}

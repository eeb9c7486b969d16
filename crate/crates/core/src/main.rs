//! Command-line entry point; see [`longidesign::cli`].

fn main() {
    std::process::exit(longidesign::cli::run(std::env::args_os()));
}

fn main() {
    let args: Vec<std::ffi::OsString> = std::env::args_os().collect();
    std::process::exit(telegraph_cli::cli::run(args, &mut std::io::stdout(), &mut std::io::stderr()));
}

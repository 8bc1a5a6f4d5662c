fn main() {
    std::process::exit(covmrc_cli::cli_main(std::env::args_os()));
}

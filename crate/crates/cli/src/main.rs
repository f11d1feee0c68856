use clap::Parser;

fn main() {
    bpre_cli::init_logging();
    let cli = match bpre_cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { bpre_cli::EXIT_USAGE } else { bpre_cli::EXIT_OK });
        }
    };
    std::process::exit(bpre_cli::run(cli));
}

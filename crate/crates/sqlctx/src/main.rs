use clap::Parser;

fn main() {
    let cli = sqlctx::cli::Cli::parse();
    std::process::exit(sqlctx::cli::run(cli));
}

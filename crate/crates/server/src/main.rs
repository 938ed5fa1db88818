use clap::Parser;

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    dronetrain_server::cli::run(dronetrain_server::cli::Cli::parse())
}

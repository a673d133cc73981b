// glibc trims and re-faults per-step graph memory while a dataset cache is
// resident, which costs more than re-parsing; mimalloc keeps it mapped.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    std::process::exit(matscale::cli::run(std::env::args_os()));
}

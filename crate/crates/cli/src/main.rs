fn main() {
    // Exit quietly when the reader of stdout goes away (`distilnas analyze | head`)
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(distilnas_cli::run(std::env::args_os()));
}

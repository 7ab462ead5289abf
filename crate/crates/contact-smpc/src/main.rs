fn main() {
    let code = contact_smpc::cli::main_with(std::env::args_os(), std::env::var_os(contact_smpc::cli::CONFIG_ENV));
    std::process::exit(code);
}

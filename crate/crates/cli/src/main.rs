fn main() { println!("{}", slsdp::DEFAULT_RANK_TOL); }

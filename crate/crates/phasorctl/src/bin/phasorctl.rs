fn main() {
    println!("phasorctl");
}

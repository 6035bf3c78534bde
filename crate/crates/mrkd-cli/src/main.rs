fn main() {
    println!("mrkd");
}

//! Acceptance suite for the library.

mod criteria;

fn main() {
    criteria::run(&[]);
}
